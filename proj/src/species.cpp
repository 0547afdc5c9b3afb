#include "mmesr/species.hpp"

#include "mmesr/errors.hpp"
#include "mmesr/io.hpp"
#include "mmesr/parallel.hpp"
#include "mmesr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace mmesr
{

namespace
{

struct Hypothesis
{
    int inliers = -1;
    double sse = std::numeric_limits<double>::infinity();
};

// Ordinary least squares f = a + s b over the given site indices.
std::optional<LineFit> least_squares_line(const std::vector<PerturbationSite>& sites, std::vector<int> members)
{
    std::sort(members.begin(), members.end());
    const auto n = static_cast<double>(members.size());
    if (members.size() < 2)
        return std::nullopt;
    double mb = 0.0, mf = 0.0;
    for (int i : members)
    {
        mb += sites[static_cast<std::size_t>(i)].b_tesla;
        mf += sites[static_cast<std::size_t>(i)].freq_hz;
    }
    mb /= n;
    mf /= n;
    double sbb = 0.0, sbf = 0.0, sff = 0.0;
    for (int i : members)
    {
        const double db = sites[static_cast<std::size_t>(i)].b_tesla - mb;
        const double df = sites[static_cast<std::size_t>(i)].freq_hz - mf;
        sbb += db * db;
        sbf += db * df;
        sff += df * df;
    }
    if (!(sbb > 0.0))
        return std::nullopt;

    LineFit fit;
    fit.slope_hz_per_tesla = sbf / sbb;
    fit.intercept_hz = mf - fit.slope_hz_per_tesla * mb;
    double sse = 0.0;
    for (int i : members)
    {
        const auto& s = sites[static_cast<std::size_t>(i)];
        const double r = s.freq_hz - (fit.intercept_hz + fit.slope_hz_per_tesla * s.b_tesla);
        sse += r * r;
        fit.b_tesla.push_back(s.b_tesla);
        fit.f_hz.push_back(s.freq_hz);
    }
    fit.members = std::move(members);
    fit.rms_hz = std::sqrt(sse / n);
    fit.r2 = sff > 0.0 ? std::clamp(1.0 - sse / sff, 0.0, 1.0) : 1.0;
    if (n > 2.0)
    {
        const double s2 = sse / (n - 2.0);
        fit.sigma_slope = std::sqrt(s2 / sbb);
        fit.sigma_intercept = std::sqrt(s2 * (1.0 / n + mb * mb / sbb));
    }
    return fit;
}

std::vector<int> inliers_of(const std::vector<PerturbationSite>& sites, const std::vector<int>& pool, double intercept,
                            double slope, double tol)
{
    std::vector<int> out;
    for (int i : pool)
    {
        const auto& s = sites[static_cast<std::size_t>(i)];
        if (std::abs(s.freq_hz - (intercept + slope * s.b_tesla)) <= tol)
            out.push_back(i);
    }
    return out;
}

} // namespace

LineRegression regress_lines(const std::vector<PerturbationSite>& sites, const RegressOptions& opts)
{
    if (opts.iterations < 1 || !(opts.tolerance_hz > 0.0) || opts.min_inliers < 3)
        throw std::invalid_argument("regress_lines: need iterations >= 1, tolerance > 0 and min_inliers >= 3");

    LineRegression out;
    std::vector<int> remaining(sites.size());
    std::iota(remaining.begin(), remaining.end(), 0);

    for (std::uint64_t round = 0; remaining.size() >= static_cast<std::size_t>(opts.min_inliers); ++round)
    {
        const std::size_t n = remaining.size();
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        if (n * (n - 1) / 2 <= static_cast<std::size_t>(opts.iterations))
        {
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t b = a + 1; b < n; ++b)
                    pairs.emplace_back(a, b);
        }
        else
        {
            pairs.resize(static_cast<std::size_t>(opts.iterations));
            for (std::size_t it = 0; it < pairs.size(); ++it)
            {
                auto rng = stream_rng(opts.seed, round, it);
                const auto a = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
                auto b = std::uniform_int_distribution<std::size_t>(0, n - 2)(rng);
                if (b >= a)
                    ++b;
                pairs[it] = {a, b};
            }
        }

        std::vector<Hypothesis> scores(pairs.size());
        parallel_for(pairs.size(), opts.threads, [&](std::size_t k) {
            const auto& p = sites[static_cast<std::size_t>(remaining[pairs[k].first])];
            const auto& q = sites[static_cast<std::size_t>(remaining[pairs[k].second])];
            if (p.b_tesla == q.b_tesla)
                return;
            const double slope = (q.freq_hz - p.freq_hz) / (q.b_tesla - p.b_tesla);
            const double intercept = p.freq_hz - slope * p.b_tesla;
            Hypothesis h{0, 0.0};
            for (int i : remaining)
            {
                const auto& s = sites[static_cast<std::size_t>(i)];
                const double r = s.freq_hz - (intercept + slope * s.b_tesla);
                if (std::abs(r) <= opts.tolerance_hz)
                {
                    ++h.inliers;
                    h.sse += r * r;
                }
            }
            scores[k] = h;
        });

        std::size_t best = 0;
        for (std::size_t k = 1; k < scores.size(); ++k)
            if (scores[k].inliers > scores[best].inliers ||
                (scores[k].inliers == scores[best].inliers && scores[k].sse < scores[best].sse))
                best = k;
        if (scores.empty() || scores[best].inliers < opts.min_inliers)
            break;

        const auto& p = sites[static_cast<std::size_t>(remaining[pairs[best].first])];
        const auto& q = sites[static_cast<std::size_t>(remaining[pairs[best].second])];
        double slope = (q.freq_hz - p.freq_hz) / (q.b_tesla - p.b_tesla);
        double intercept = p.freq_hz - slope * p.b_tesla;
        auto members = inliers_of(sites, remaining, intercept, slope, opts.tolerance_hz);
        std::optional<LineFit> fit;
        for (int pass = 0; pass < 5; ++pass)
        {
            fit = least_squares_line(sites, members);
            if (!fit)
                break;
            auto next = inliers_of(sites, remaining, fit->intercept_hz, fit->slope_hz_per_tesla, opts.tolerance_hz);
            if (next == members)
                break;
            if (next.size() < static_cast<std::size_t>(opts.min_inliers))
                break;
            members = std::move(next);
        }
        if (!fit || fit->members.size() < static_cast<std::size_t>(opts.min_inliers))
            break;

        std::vector<int> rest;
        std::set_difference(remaining.begin(), remaining.end(), fit->members.begin(), fit->members.end(),
                            std::back_inserter(rest));
        remaining = std::move(rest);
        out.lines.push_back(std::move(*fit));
    }
    out.unassigned = remaining;
    return out;
}

double effective_g(double slope_hz_per_tesla, int delta_sz, const PhysicalConstants& constants)
{
    if (delta_sz < 1)
        throw std::invalid_argument("effective_g: delta_sz must be at least 1");
    return slope_hz_per_tesla / (constants.bohr_magneton_over_h * delta_sz);
}

std::string roman_numeral(int n)
{
    if (n < 1 || n > 3999)
        throw std::invalid_argument("roman_numeral: out of range");
    static const std::pair<int, const char*> table[] = {{1000, "M"}, {900, "CM"}, {500, "D"}, {400, "CD"}, {100, "C"},
                                                        {90, "XC"},  {50, "L"},   {40, "XL"}, {10, "X"},   {9, "IX"},
                                                        {5, "V"},    {4, "IV"},   {1, "I"}};
    std::string out;
    for (const auto& [value, glyph] : table)
        for (; n >= value; n -= value)
            out += glyph;
    return out;
}

std::vector<TransitionRow> table_of_transitions(const SpinSystem& system, int max_delta_sz)
{
    // The grid only orients each pair (lower/upper); ZFS comes from B = 0.
    std::vector<double> grid;
    for (int i = 0; i <= 20; ++i)
        grid.push_back(0.05 * i);
    const auto lines = transitions(level_diagram(system, grid), max_delta_sz);

    std::vector<TransitionRow> rows;
    for (const auto& l : lines)
        rows.push_back({"", l.delta_sz, l.zfs_hz, l.lower_label, l.upper_label, l.name()});
    // kHz buckets keep Kramers-partner ties exact despite rounding noise
    auto key = [](const TransitionRow& r) {
        return std::make_tuple(r.delta_sz, std::llround(r.zfs_hz / 1e3), r.transition);
    };
    std::sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
    for (std::size_t i = 0; i < rows.size(); ++i)
        rows[i].label = roman_numeral(static_cast<int>(i) + 1);
    return rows;
}

namespace
{

std::vector<double> distinct_zfs(const SpinSystem& system, int max_delta_sz)
{
    std::vector<double> out;
    for (const auto& row : table_of_transitions(system, max_delta_sz))
        out.push_back(row.zfs_hz);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end(), [](double a, double b) { return std::abs(a - b) < 1e3; }), out.end());
    return out;
}

SpeciesRecord record_from_json(const nlohmann::json& r, const std::filesystem::path& base_dir)
{
    SpeciesRecord rec;
    rec.name = r.at("name").get<std::string>();
    rec.lande_g = r.value("lande_g", 0.0);
    rec.zfs_list_hz = r.value("zfs_hz", std::vector<double>{});
    rec.tolerance_g = r.value("tolerance_g", rec.tolerance_g);
    rec.tolerance_zfs_hz = r.value("tolerance_zfs_hz", rec.tolerance_zfs_hz);
    rec.unconfirmed = r.value("unconfirmed", false);
    rec.delta_sz = r.value("delta_sz", 1);
    if (r.contains("system"))
        rec.system = spin_system_from_json(r["system"]);
    else if (r.contains("system_file"))
    {
        std::filesystem::path p = r["system_file"].get<std::string>();
        rec.system = read_spin_system(p.is_relative() ? base_dir / p : p);
    }
    if (rec.system && rec.lande_g == 0.0)
        rec.lande_g = rec.system->lande_g();
    if (rec.system && rec.zfs_list_hz.empty())
        rec.zfs_list_hz = distinct_zfs(*rec.system, rec.delta_sz);
    if (!(rec.lande_g > 0.0) || !(rec.tolerance_g > 0.0) || !(rec.tolerance_zfs_hz > 0.0) || rec.delta_sz < 1)
        throw DataError("species record '" + rec.name +
                        "': lande_g and tolerances must be positive and delta_sz at least 1");
    if (!rec.system && rec.zfs_list_hz.empty())
        throw DataError("species record '" + rec.name + "': needs zfs_hz or a spin system");
    return rec;
}

} // namespace

std::vector<SpeciesRecord> default_species_db()
{
    SpeciesRecord gd;
    gd.name = "Gd3+";
    gd.system = gd_cawo4();
    gd.lande_g = gd.system->lande_g();
    gd.delta_sz = 5;
    gd.zfs_list_hz = distinct_zfs(*gd.system, gd.delta_sz);

    SpeciesRecord fe;
    fe.name = "Fe3+";
    fe.lande_g = 4.3;
    fe.zfs_list_hz = {2.20e9};

    SpeciesRecord unknown_a;
    unknown_a.name = "Unknown A";
    unknown_a.lande_g = 7.0;
    unknown_a.zfs_list_hz = {6.10e9};
    unknown_a.tolerance_g = 0.3;
    unknown_a.tolerance_zfs_hz = 0.3e9;
    unknown_a.unconfirmed = true;
    return {gd, fe, unknown_a};
}

std::vector<SpeciesRecord> species_db_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir)
{
    try
    {
        if (!j.is_array())
            throw DataError("species database must be a JSON array of records");
        std::vector<SpeciesRecord> db;
        for (const auto& r : j)
            db.push_back(record_from_json(r, base_dir));
        return db;
    }
    catch (const nlohmann::json::exception& e)
    {
        throw DataError(std::string("species database: ") + e.what());
    }
}

nlohmann::json to_json(const std::vector<SpeciesRecord>& db)
{
    auto out = nlohmann::json::array();
    for (const auto& r : db)
    {
        nlohmann::json j;
        j["name"] = r.name;
        j["lande_g"] = r.lande_g;
        j["zfs_hz"] = r.zfs_list_hz;
        j["tolerance_g"] = r.tolerance_g;
        j["tolerance_zfs_hz"] = r.tolerance_zfs_hz;
        j["unconfirmed"] = r.unconfirmed;
        j["delta_sz"] = r.delta_sz;
        if (r.system)
            j["system"] = spin_system_to_json(*r.system);
        out.push_back(std::move(j));
    }
    return out;
}

namespace
{

void match_system(const LineFit& line, const SpeciesRecord& rec, const PhysicalConstants& constants,
                  std::vector<SpeciesMatch>& out)
{
    std::vector<double> grid = line.b_tesla;
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    if (grid.empty())
        return;
    LevelDiagramOptions opts;
    opts.constants = constants;
    for (const auto& t : transitions(level_diagram(*rec.system, grid, opts), rec.delta_sz))
    {
        double sse = 0.0;
        for (std::size_t k = 0; k < line.b_tesla.size(); ++k)
        {
            const auto row = std::lower_bound(grid.begin(), grid.end(), line.b_tesla[k]) - grid.begin();
            const double r = line.f_hz[k] - t.freq_hz(row);
            sse += r * r;
        }
        const double rms = std::sqrt(sse / static_cast<double>(line.b_tesla.size()));
        if (rms <= rec.tolerance_zfs_hz)
            out.push_back({rec.name, t.name(), rec.unconfirmed, effective_g(line.slope_hz_per_tesla, t.delta_sz, constants),
                           t.zfs_hz, rms / rec.tolerance_zfs_hz});
    }
}

void match_simple(const LineFit& line, const SpeciesRecord& rec, const PhysicalConstants& constants,
                  std::vector<SpeciesMatch>& out)
{
    const double g = effective_g(line.slope_hz_per_tesla, rec.delta_sz, constants);
    const double sigma_g = effective_g(line.sigma_slope, rec.delta_sz, constants);
    const auto nearest = *std::min_element(rec.zfs_list_hz.begin(), rec.zfs_list_hz.end(), [&](double a, double b) {
        return std::abs(a - line.intercept_hz) < std::abs(b - line.intercept_hz);
    });
    const double dg = std::abs(g - rec.lande_g);
    const double dz = std::abs(line.intercept_hz - nearest);
    if (dg > rec.tolerance_g || dz > rec.tolerance_zfs_hz)
        return;
    const double z = std::hypot(dg / std::hypot(rec.tolerance_g, sigma_g),
                                dz / std::hypot(rec.tolerance_zfs_hz, line.sigma_intercept));
    out.push_back({rec.name, "", rec.unconfirmed, g, nearest, z});
}

} // namespace

std::vector<LineIdentification> match_species(const std::vector<LineFit>& lines, const std::vector<SpeciesRecord>& db,
                                              const PhysicalConstants& constants)
{
    if (db.empty())
        throw std::invalid_argument("match_species: the species database is empty");
    std::vector<LineIdentification> out;
    for (const auto& line : lines)
    {
        LineIdentification id;
        id.line = line;
        id.g_eff = effective_g(line.slope_hz_per_tesla, 1, constants);
        for (const auto& rec : db)
        {
            if (rec.system)
                match_system(line, rec, constants, id.matches);
            else
                match_simple(line, rec, constants, id.matches);
        }
        std::sort(id.matches.begin(), id.matches.end(), [](const auto& a, const auto& b) {
            return std::tie(a.z, a.species, a.transition) < std::tie(b.z, b.species, b.transition);
        });
        if (id.matches.empty())
        {
            id.status = "unknown";
            id.best = "unknown";
        }
        else
        {
            id.status = id.matches.front().unconfirmed ? "unconfirmed" : "confirmed";
            id.best = id.matches.front().species;
        }
        out.push_back(std::move(id));
    }
    return out;
}

nlohmann::json to_json(const LineFit& line)
{
    return {{"slope_hz_per_tesla", line.slope_hz_per_tesla},
            {"intercept_hz", line.intercept_hz},
            {"sigma_slope_hz_per_tesla", line.sigma_slope},
            {"sigma_intercept_hz", line.sigma_intercept},
            {"members", line.members},
            {"rms_hz", line.rms_hz},
            {"r2", line.r2}};
}

nlohmann::json identify_json(const std::vector<LineIdentification>& ids, const std::vector<PerturbationSite>& sites,
                             const std::vector<int>& unassigned)
{
    nlohmann::json j;
    j["lines"] = nlohmann::json::array();
    for (const auto& id : ids)
    {
        auto l = to_json(id.line);
        l["g_eff"] = id.g_eff;
        l["status"] = id.status;
        l["best"] = id.best;
        l["matches"] = nlohmann::json::array();
        for (const auto& m : id.matches)
        {
            nlohmann::json mj{{"species", m.species}, {"unconfirmed", m.unconfirmed}, {"g_eff", m.g_eff},
                              {"zfs_hz", m.zfs_hz},   {"z", m.z}};
            if (!m.transition.empty())
                mj["transition"] = m.transition;
            l["matches"].push_back(std::move(mj));
        }
        j["lines"].push_back(std::move(l));
    }
    j["unassigned"] = nlohmann::json::array();
    for (int i : unassigned)
    {
        const auto& s = sites[static_cast<std::size_t>(i)];
        j["unassigned"].push_back({{"site", i}, {"mode_id", s.mode_id}, {"b_tesla", s.b_tesla}, {"f_hz", s.freq_hz}});
    }
    return j;
}

} // namespace mmesr
