#include "mmesr/synth.hpp"

#include "mmesr/coupling.hpp"
#include "mmesr/errors.hpp"
#include "mmesr/io.hpp"
#include "mmesr/parallel.hpp"
#include "mmesr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace mmesr
{

namespace fs = std::filesystem;

Scenario scenario_from_json(const nlohmann::json& j, const fs::path& base_dir)
{
    Scenario s;
    try
    {
        s.seed = j.value("seed", std::uint64_t{0});
        const auto& sweep = j.at("sweep");
        s.b_start_tesla = sweep.at("start_tesla").get<double>();
        s.b_stop_tesla = sweep.at("stop_tesla").get<double>();
        s.b_step_tesla = sweep.at("step_tesla").get<double>();
        s.noise_sigma = j.value("noise_sigma", 0.0);
        s.freq_jitter_hz = j.value("freq_jitter_hz", 0.0);
        s.baseline = j.value("baseline", s.baseline);
        s.max_detuning_g = j.value("max_detuning_g", s.max_detuning_g);
        if (j.contains("trace"))
        {
            s.half_span_hz = j["trace"].value("half_span_hz", s.half_span_hz);
            s.points = j["trace"].value("points", s.points);
        }
        for (const auto& m : j.at("modes"))
        {
            SynthMode mode;
            mode.f0_hz = m.at("f0_hz").get<double>();
            mode.q_factor = m.at("q_factor").get<double>();
            mode.fano_q = m.value("fano_q", 0.0);
            mode.amplitude = m.value("amplitude", 1.0);
            mode.half_span_hz = m.value("half_span_hz", 0.0);
            mode.points = m.value("points", 0);
            s.modes.push_back(mode);
        }
        if (j.contains("species"))
            for (const auto& sp : j.at("species"))
            {
                SynthSpecies species;
                species.label = sp.value("label", std::string{});
                species.g_hz = sp.at("g_hz").get<double>();
                species.max_delta_sz = sp.value("max_delta_sz", 1);
                if (sp.contains("system"))
                    species.system = spin_system_from_json(sp["system"]);
                else if (sp.contains("system_file"))
                {
                    fs::path p = sp["system_file"].get<std::string>();
                    if (p.is_relative())
                        p = base_dir / p;
                    species.system = read_spin_system(p);
                }
                else
                {
                    const auto& line = sp.at("line");
                    species.line_intercept_hz = line.at("intercept_hz").get<double>();
                    species.line_slope_hz_per_tesla = line.at("slope_hz_per_tesla").get<double>();
                }
                if (species.label.empty())
                    species.label = species.system ? species.system->label() : "line";
                s.species.push_back(std::move(species));
            }
    }
    catch (const nlohmann::json::exception& e)
    {
        throw DataError(std::string("scenario JSON: ") + e.what());
    }
    return s;
}

namespace
{

void validate(const Scenario& s)
{
    if (!(s.b_step_tesla > 0.0))
        throw std::invalid_argument("scenario: sweep step must be positive");
    if (!(s.b_stop_tesla >= s.b_start_tesla))
        throw std::invalid_argument("scenario: sweep stop must not precede start");
    if (!(s.noise_sigma >= 0.0) || !(s.freq_jitter_hz >= 0.0))
        throw std::invalid_argument("scenario: noise levels must be non-negative");
    if (s.modes.empty())
        throw std::invalid_argument("scenario: at least one mode is required");
    for (const auto& m : s.modes)
    {
        if (!(m.q_factor > 0.0) || !(m.f0_hz > 0.0))
            throw std::invalid_argument("scenario: modes need positive f0 and Q");
        const int pts = m.points > 0 ? m.points : s.points;
        if (pts < 8)
            throw std::invalid_argument("scenario: a mode window needs at least 8 points");
    }
    for (const auto& sp : s.species)
        if (!(sp.g_hz >= 0.0))
            throw std::invalid_argument("scenario: coupling g must be non-negative");
}

} // namespace

GroundTruth ground_truth(const Scenario& s, int threads)
{
    validate(s);
    GroundTruth t;
    t.seed = s.seed;
    t.step_tesla = s.b_step_tesla;
    t.noise_sigma = s.noise_sigma;
    t.freq_jitter_hz = s.freq_jitter_hz;
    t.baseline = s.baseline;

    const auto steps = static_cast<int>(std::llround((s.b_stop_tesla - s.b_start_tesla) / s.b_step_tesla));
    for (int i = 0; i <= steps; ++i)
        t.fields_tesla.push_back(s.b_start_tesla + i * s.b_step_tesla);

    for (const auto& m : s.modes)
    {
        const double hs = m.half_span_hz > 0.0 ? m.half_span_hz : s.half_span_hz;
        const int pts = m.points > 0 ? m.points : s.points;
        for (int k = 0; k < pts; ++k)
            t.grid_hz.push_back(m.f0_hz - hs + 2.0 * hs * k / (pts - 1));
    }
    std::sort(t.grid_hz.begin(), t.grid_hz.end());
    t.grid_hz.erase(std::unique(t.grid_hz.begin(), t.grid_hz.end()), t.grid_hz.end());

    for (std::size_t a = 0; a < s.modes.size(); ++a)
        for (std::size_t b = a + 1; b < s.modes.size(); ++b)
        {
            const double ga = s.modes[a].f0_hz / s.modes[a].q_factor;
            const double gb = s.modes[b].f0_hz / s.modes[b].q_factor;
            if (std::abs(s.modes[a].f0_hz - s.modes[b].f0_hz) < 3.0 * std::max(ga, gb))
                t.warnings.push_back("modes " + std::to_string(a) + " and " + std::to_string(b) +
                                     " are closer than 3 linewidths");
        }

    // Lines on a 10x refined grid; sweep fields are every 10th entry.
    constexpr int kRefine = 10;
    std::vector<double> fine;
    for (int i = 0; i <= steps * kRefine; ++i)
        fine.push_back(s.b_start_tesla + i * s.b_step_tesla / kRefine);
    const double fine_step = s.b_step_tesla / kRefine;

    std::vector<std::vector<double>> fine_lines;
    for (const auto& sp : s.species)
    {
        if (sp.system)
        {
            LevelDiagramOptions opts;
            opts.threads = threads;
            const auto diagram = level_diagram(*sp.system, fine, opts);
            for (const auto& line : transitions(diagram, sp.max_delta_sz))
            {
                TrueLine tl{sp.label, line.name(), line.delta_sz, sp.g_hz, {}};
                for (int i = 0; i <= steps; ++i)
                    tl.freq_hz.push_back(line.freq_hz[i * kRefine]);
                t.lines.push_back(std::move(tl));
                fine_lines.emplace_back(line.freq_hz.data(), line.freq_hz.data() + line.freq_hz.size());
            }
        }
        else
        {
            TrueLine tl{sp.label, sp.label, 1, sp.g_hz, {}};
            std::vector<double> f;
            for (double b : fine)
                f.push_back(sp.line_intercept_hz + sp.line_slope_hz_per_tesla * b);
            for (int i = 0; i <= steps; ++i)
                tl.freq_hz.push_back(f[static_cast<std::size_t>(i * kRefine)]);
            t.lines.push_back(std::move(tl));
            fine_lines.push_back(std::move(f));
        }
    }

    for (std::size_t mi = 0; mi < s.modes.size(); ++mi)
    {
        const auto& m = s.modes[mi];
        TrueMode tm{m, m.f0_hz / m.q_factor, {}};
        for (std::size_t li = 0; li < t.lines.size(); ++li)
        {
            const auto& f = fine_lines[li];
            for (std::size_t j = 0; j + 1 < f.size(); ++j)
            {
                const double d0 = f[j] - m.f0_hz, d1 = f[j + 1] - m.f0_hz;
                if (d0 == 0.0 || (d0 < 0.0) != (d1 < 0.0))
                {
                    if (d1 == 0.0 && j + 2 < f.size())
                        continue;   // counted at the next interval
                    const double frac = d0 == d1 ? 0.0 : d0 / (d0 - d1);
                    t.crossings.push_back({static_cast<int>(mi), t.lines[li].species, t.lines[li].name,
                                           fine[j] + frac * fine_step, m.f0_hz, t.lines[li].g_hz,
                                           (f[j + 1] - f[j]) / fine_step});
                }
            }
        }
        for (std::size_t i = 0; i < t.fields_tesla.size(); ++i)
        {
            double centre = m.f0_hz;
            for (const auto& line : t.lines)
            {
                const double ws = line.freq_hz[i];
                if (line.g_hz > 0.0 && std::abs(ws - m.f0_hz) <= s.max_detuning_g * line.g_hz)
                    centre += photon_like_branch(CrossingModel{m.f0_hz, ws, 0.0, line.g_hz}, 0.0) - m.f0_hz;
            }
            tm.centre_hz.push_back(centre);
        }
        t.modes.push_back(std::move(tm));
    }
    std::sort(t.crossings.begin(), t.crossings.end(), [](const TrueCrossing& a, const TrueCrossing& b) {
        return a.mode_id != b.mode_id ? a.mode_id < b.mode_id : a.b_tesla < b.b_tesla;
    });
    return t;
}

SweepMap render_sweep(const GroundTruth& t, int threads)
{
    SweepMap map;
    map.step_tesla = t.step_tesla;
    map.steps.resize(t.fields_tesla.size());
    parallel_for(t.fields_tesla.size(), threads, [&](std::size_t i) {
        std::vector<double> y(t.grid_hz.size(), t.baseline);
        for (std::size_t mi = 0; mi < t.modes.size(); ++mi)
        {
            const auto& m = t.modes[mi];
            double centre = m.centre_hz[i];
            if (t.freq_jitter_hz > 0.0)
            {
                auto rng = stream_rng(t.seed, 1 + mi, i);
                centre += t.freq_jitter_hz * std::normal_distribution<double>(0.0, 1.0)(rng);
            }
            const FanoParams p{centre, m.gamma_hz, m.spec.fano_q, m.spec.amplitude, 0.0};
            for (std::size_t k = 0; k < y.size(); ++k)
                y[k] += fano_model(p, t.grid_hz[k]);
        }
        if (t.noise_sigma > 0.0)
        {
            // stream 0 is reserved for trace noise; modes use 1.. for jitter
            auto rng = stream_rng(t.seed, 0, i);
            std::normal_distribution<double> gauss(0.0, t.noise_sigma);
            for (auto& v : y)
                v += gauss(rng);
        }
        // |S21| cannot be negative on disk; clip noise excursions below zero
        for (auto& v : y)
            v = std::max(v, 1e-12);
        char name[32];
        std::snprintf(name, sizeof name, "b%04zu.csv", i);
        TraceMeta meta;
        meta.field_tesla = t.fields_tesla[i];
        map.steps[i] = SweepStep{t.fields_tesla[i], Trace::from_linear(t.grid_hz, std::move(y), meta), name};
    });
    return map;
}

nlohmann::json to_json(const GroundTruth& t)
{
    nlohmann::json j;
    j["seed"] = t.seed;
    j["step_tesla"] = t.step_tesla;
    j["noise_sigma"] = t.noise_sigma;
    j["freq_jitter_hz"] = t.freq_jitter_hz;
    j["baseline"] = t.baseline;
    j["fields_tesla"] = t.fields_tesla;
    j["grid"] = {{"points", t.grid_hz.size()},
                 {"min_hz", t.grid_hz.empty() ? 0.0 : t.grid_hz.front()},
                 {"max_hz", t.grid_hz.empty() ? 0.0 : t.grid_hz.back()}};
    j["modes"] = nlohmann::json::array();
    for (std::size_t i = 0; i < t.modes.size(); ++i)
    {
        const auto& m = t.modes[i];
        j["modes"].push_back({{"mode_id", i},
                              {"f0_hz", m.spec.f0_hz},
                              {"q_factor", m.spec.q_factor},
                              {"gamma_hz", m.gamma_hz},
                              {"fano_q", m.spec.fano_q},
                              {"amplitude", m.spec.amplitude},
                              {"centre_hz", m.centre_hz}});
    }
    j["lines"] = nlohmann::json::array();
    for (const auto& l : t.lines)
        j["lines"].push_back({{"species", l.species},
                              {"name", l.name},
                              {"delta_sz", l.delta_sz},
                              {"g_hz", l.g_hz},
                              {"freq_hz", l.freq_hz}});
    j["crossings"] = nlohmann::json::array();
    for (const auto& c : t.crossings)
        j["crossings"].push_back({{"mode_id", c.mode_id},
                                  {"species", c.species},
                                  {"line", c.line},
                                  {"b_tesla", c.b_tesla},
                                  {"f_hz", c.f_hz},
                                  {"g_hz", c.g_hz},
                                  {"slope_hz_per_tesla", c.slope_hz_per_tesla}});
    j["warnings"] = t.warnings;
    return j;
}

SynthOutput synth_sweep(const Scenario& scenario, const fs::path& out_dir, int threads)
{
    SynthOutput out;
    out.truth = ground_truth(scenario, threads);
    const SweepMap map = render_sweep(out.truth, threads);
    out.manifest = save_sweep(map, out_dir);
    write_text(out_dir / "ground_truth.json", to_json(out.truth).dump(2) + "\n");
    return out;
}

} // namespace mmesr
