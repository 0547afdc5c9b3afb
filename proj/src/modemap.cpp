#include "mmesr/modemap.hpp"

#include "mmesr/errors.hpp"
#include "mmesr/io.hpp"
#include "mmesr/parallel.hpp"
#include "mmesr/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

namespace mmesr
{

namespace fs = std::filesystem;

SweepMap load_sweep(const fs::path& manifest)
{
    const auto j = read_json(manifest);
    const fs::path base = manifest.parent_path();
    SweepMap map;
    try
    {
        map.step_tesla = j.at("step_tesla").get<double>();
        map.direction = j.value("direction", std::string("up"));
        for (const auto& s : j.at("steps"))
        {
            SweepStep step;
            step.b_tesla = s.at("b_tesla").get<double>();
            step.file = s.at("trace").get<std::string>();
            map.steps.push_back(std::move(step));
        }
    }
    catch (const nlohmann::json::exception& e)
    {
        throw DataError(manifest.string() + ": malformed manifest (" + e.what() + ")");
    }
    if (!(map.step_tesla > 0.0))
        throw DataError(manifest.string() + ": step_tesla must be positive");

    for (auto& step : map.steps)
    {
        const fs::path p = base / step.file;
        if (!fs::exists(p))
            throw DataError(manifest.string() + ": referenced trace file '" + p.string() + "' does not exist");
        step.trace = read_trace_csv(p);
        step.trace.meta.field_tesla = step.b_tesla;
    }
    std::stable_sort(map.steps.begin(), map.steps.end(),
                     [](const SweepStep& a, const SweepStep& b) { return a.b_tesla < b.b_tesla; });
    for (std::size_t i = 1; i < map.steps.size(); ++i)
        if (map.steps[i].b_tesla == map.steps[i - 1].b_tesla)
            throw DataError(manifest.string() + ": duplicate field value " + format_double(map.steps[i].b_tesla) +
                            " T (files '" + map.steps[i - 1].file + "' and '" + map.steps[i].file + "')");
    return map;
}

fs::path save_sweep(const SweepMap& map, const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw DataError(dir.string() + ": cannot create output directory (" + ec.message() + ")");
    nlohmann::json j;
    j["step_tesla"] = map.step_tesla;
    j["direction"] = map.direction;
    j["steps"] = nlohmann::json::array();
    for (std::size_t i = 0; i < map.steps.size(); ++i)
    {
        std::string file = map.steps[i].file;
        if (file.empty())
        {
            char buf[32];
            std::snprintf(buf, sizeof buf, "b%04zu.csv", i);
            file = buf;
        }
        write_trace_csv(dir / file, map.steps[i].trace);
        j["steps"].push_back({{"b_tesla", map.steps[i].b_tesla}, {"trace", file}});
    }
    const fs::path manifest = dir / "manifest.json";
    write_text(manifest, j.dump(2) + "\n");
    return manifest;
}

namespace
{

double extrapolate(const std::vector<TrackPoint>& history, double b)
{
    const std::size_t n = std::min<std::size_t>(history.size(), 5);
    if (n == 1)
        return history.back().params.f0_hz;
    double mb = 0, mf = 0;
    for (std::size_t i = history.size() - n; i < history.size(); ++i)
    {
        mb += history[i].b_tesla;
        mf += history[i].params.f0_hz;
    }
    mb /= static_cast<double>(n);
    mf /= static_cast<double>(n);
    double sbb = 0, sbf = 0;
    for (std::size_t i = history.size() - n; i < history.size(); ++i)
    {
        const double db = history[i].b_tesla - mb;
        sbb += db * db;
        sbf += db * (history[i].params.f0_hz - mf);
    }
    return sbb > 0.0 ? mf + sbf / sbb * (b - mb) : mf;
}

std::optional<FanoParams> lock(const Trace& trace, const FanoParams& seed, const FanoParams& last, double pred,
                               double window)
{
    const Trace slice = trace.slice(pred - window, pred + window);
    if (slice.size() < 3)
        return std::nullopt;
    const auto candidates = find_peaks(slice, 0.3 * std::abs(seed.amp), 0.0);
    const FanoParams* best = nullptr;
    for (const auto& c : candidates)
        if ((c.amp > 0) == (seed.amp > 0) && (!best || std::abs(c.f0_hz - pred) < std::abs(best->f0_hz - pred)))
            best = &c;
    if (!best)
        return std::nullopt;

    FanoParams guess = last;
    guess.f0_hz = best->f0_hz;
    FanoFit fit;
    try
    {
        fit = fit_local(trace, guess, 10.0);
    }
    catch (const UnfittableError&)
    {
        return std::nullopt;
    }
    const auto& p = fit.params;
    const bool ok = std::isfinite(p.f0_hz) && std::abs(p.f0_hz - pred) <= window && p.gamma_hz > 0.25 * seed.gamma_hz &&
                    p.gamma_hz < 4.0 * seed.gamma_hz && (p.amp > 0) == (seed.amp > 0) &&
                    std::abs(p.amp) > 0.25 * std::abs(seed.amp);
    if (!ok)
        return std::nullopt;
    return p;
}

ModeTrace track_one(const SweepMap& map, const FanoParams& seed, int id, const TrackOptions& opts)
{
    ModeTrace out;
    out.mode_id = id;
    out.step_tesla = map.step_tesla;
    const double base_window = opts.window_hz > 0.0 ? opts.window_hz : 20.0 * seed.gamma_hz;

    const std::size_t n = map.steps.size();
    FanoParams last = seed;
    double pred = seed.f0_hz;
    int missed = 0;
    std::optional<std::pair<double, double>> gap;
    for (std::size_t k = 0; k < n; ++k)
    {
        const auto& step = map.steps[opts.reverse ? n - 1 - k : k];
        if (missed > 0 && !out.points.empty())
            pred = extrapolate(out.points, step.b_tesla);
        // while lost, the window also reaches back to the last locked centre
        double window = base_window * std::ldexp(1.0, std::min(missed, opts.max_window_doublings));
        if (missed > 0)
            window += std::abs(pred - last.f0_hz);
        if (const auto p = lock(step.trace, seed, last, pred, window))
        {
            out.points.push_back({step.b_tesla, *p});
            last = *p;
            pred = p->f0_hz;
            missed = 0;
            if (gap)
            {
                out.gaps.push_back(*gap);
                gap.reset();
            }
        }
        else
        {
            ++missed;
            if (!gap)
                gap = std::make_pair(step.b_tesla, step.b_tesla);
            gap->second = step.b_tesla;
        }
    }
    if (gap)
        out.gaps.push_back(*gap);

    if (opts.reverse)
    {
        std::reverse(out.points.begin(), out.points.end());
        std::reverse(out.gaps.begin(), out.gaps.end());
        for (auto& g : out.gaps)
            std::swap(g.first, g.second);
    }
    return out;
}

} // namespace

std::vector<ModeTrace> track_modes(const SweepMap& map, const std::vector<FanoParams>& seeds, const TrackOptions& opts)
{
    std::vector<ModeTrace> out(seeds.size());
    parallel_for(seeds.size(), opts.threads,
                 [&](std::size_t i) { out[i] = track_one(map, seeds[i], static_cast<int>(i), opts); });
    return out;
}

SiteExtraction extract_sites(const std::vector<ModeTrace>& traces, const SiteOptions& opts)
{
    SiteExtraction result;
    const std::size_t min_points = 11;
    for (const auto& t : traces)
    {
        const auto& pts = t.points;
        const std::size_t n = pts.size();
        if (n < min_points)
        {
            result.errors.emplace_back(t.mode_id, "mode " + std::to_string(t.mode_id) + ": only " + std::to_string(n) +
                                                      " tracked steps, need at least 11 for the baseline");
            continue;
        }
        double step = t.step_tesla;
        if (!(step > 0.0))
        {
            std::vector<double> diffs;
            for (std::size_t i = 1; i < n; ++i)
                diffs.push_back(pts[i].b_tesla - pts[i - 1].b_tesla);
            step = median_of(diffs);
        }
        const double half = 0.5 * (opts.baseline_steps - 1) * step * (1.0 + 1e-9);

        std::vector<double> dev(n), gammas(n);
        for (std::size_t i = 0; i < n; ++i)
        {
            std::vector<double> window;
            for (const auto& q : pts)
                if (std::abs(q.b_tesla - pts[i].b_tesla) <= half)
                    window.push_back(q.params.f0_hz);
            dev[i] = pts[i].params.f0_hz - median_of(std::move(window));
            gammas[i] = pts[i].params.gamma_hz;
        }
        const double scale = std::max(robust_sigma(dev), 1e-3 * median_of(gammas));
        const double threshold = opts.threshold_sigma * scale;

        std::size_t i = 0;
        while (i < n)
        {
            if (std::abs(dev[i]) <= threshold)
            {
                ++i;
                continue;
            }
            std::size_t end = i, best = i;
            while (end < n && std::abs(dev[end]) > threshold)
            {
                if (std::abs(dev[end]) > std::abs(dev[best]))
                    best = end;
                ++end;
            }
            PerturbationSite s;
            s.mode_id = t.mode_id;
            s.b_tesla = pts[best].b_tesla;
            s.freq_hz = pts[best].params.f0_hz;
            s.strength_hz = std::abs(dev[best]);
            s.b_start_tesla = pts[i].b_tesla;
            s.b_end_tesla = pts[end - 1].b_tesla;
            s.width_tesla = s.b_end_tesla - s.b_start_tesla + step;
            result.sites.push_back(s);
            i = end;
        }
    }
    return result;
}

std::string modes_csv(const std::vector<ModeTrace>& traces)
{
    std::string s = "mode_id,b_tesla,f0_hz,gamma_hz,q,amp,offset,q_factor\n";
    for (const auto& t : traces)
        for (const auto& p : t.points)
            s += std::to_string(t.mode_id) + "," + format_double(p.b_tesla) + "," + format_double(p.params.f0_hz) + "," +
                 format_double(p.params.gamma_hz) + "," + format_double(p.params.fano_q) + "," +
                 format_double(p.params.amp) + "," + format_double(p.params.offset) + "," +
                 format_double(p.params.q_factor()) + "\n";
    return s;
}

std::string sites_csv(const std::vector<PerturbationSite>& sites)
{
    std::string s = "mode_id,b_tesla,f_hz,strength_hz,width_tesla,b_start_tesla,b_end_tesla\n";
    for (const auto& x : sites)
        s += std::to_string(x.mode_id) + "," + format_double(x.b_tesla) + "," + format_double(x.freq_hz) + "," +
             format_double(x.strength_hz) + "," + format_double(x.width_tesla) + "," + format_double(x.b_start_tesla) +
             "," + format_double(x.b_end_tesla) + "\n";
    return s;
}

std::vector<ModeTrace> read_modes_csv(const std::filesystem::path& path)
{
    const auto t = read_csv(path);
    const auto c_id = t.column("mode_id"), c_b = t.column("b_tesla"), c_f = t.column("f0_hz"),
               c_g = t.column("gamma_hz"), c_q = t.column("q"), c_a = t.column("amp"), c_o = t.column("offset");
    std::vector<ModeTrace> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
    {
        const double id = t.number(r, c_id);
        if (id != std::floor(id) || id < 0)
            throw DataError(t.source.string() + ":" + std::to_string(t.line_numbers[r]) +
                            ": mode_id must be a non-negative integer");
        const int mode = static_cast<int>(id);
        auto it = std::find_if(out.begin(), out.end(), [&](const ModeTrace& m) { return m.mode_id == mode; });
        if (it == out.end())
        {
            out.push_back({mode, 0.0, {}, {}});
            it = std::prev(out.end());
        }
        const TrackPoint p{t.number(r, c_b),
                           FanoParams{t.number(r, c_f), t.number(r, c_g), t.number(r, c_q), t.number(r, c_a),
                                      t.number(r, c_o)}};
        if (!it->points.empty() && !(p.b_tesla > it->points.back().b_tesla))
            throw DataError(t.source.string() + ":" + std::to_string(t.line_numbers[r]) +
                            ": fields of mode " + std::to_string(mode) + " must be strictly increasing");
        it->points.push_back(p);
    }
    for (auto& m : out)
    {
        std::vector<double> spacing;
        for (std::size_t i = 1; i < m.points.size(); ++i)
            spacing.push_back(m.points[i].b_tesla - m.points[i - 1].b_tesla);
        m.step_tesla = spacing.empty() ? 0.0 : *std::min_element(spacing.begin(), spacing.end());
    }
    return out;
}

std::vector<PerturbationSite> read_sites_csv(const std::filesystem::path& path)
{
    const auto t = read_csv(path);
    const auto c_id = t.column("mode_id"), c_b = t.column("b_tesla"), c_f = t.column("f_hz"),
               c_s = t.column("strength_hz"), c_w = t.column("width_tesla");
    auto optional_column = [&](const std::string& name) -> std::optional<std::size_t> {
        const auto it = std::find(t.header.begin(), t.header.end(), name);
        if (it == t.header.end())
            return std::nullopt;
        return static_cast<std::size_t>(it - t.header.begin());
    };
    const auto c_lo = optional_column("b_start_tesla"), c_hi = optional_column("b_end_tesla");
    std::vector<PerturbationSite> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
    {
        PerturbationSite s;
        s.mode_id = static_cast<int>(t.number(r, c_id));
        s.b_tesla = t.number(r, c_b);
        s.freq_hz = t.number(r, c_f);
        s.strength_hz = t.number(r, c_s);
        s.width_tesla = t.number(r, c_w);
        s.b_start_tesla = c_lo ? t.number(r, *c_lo) : s.b_tesla;
        s.b_end_tesla = c_hi ? t.number(r, *c_hi) : s.b_tesla;
        out.push_back(s);
    }
    return out;
}

} // namespace mmesr
