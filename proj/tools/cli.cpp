#include "cli.hpp"

#include "mmesr/coupling.hpp"
#include "mmesr/errors.hpp"
#include "mmesr/io.hpp"
#include "mmesr/lineshape.hpp"
#include "mmesr/modemap.hpp"
#include "mmesr/pipeline.hpp"
#include "mmesr/species.hpp"
#include "mmesr/spinham.hpp"
#include "mmesr/stats.hpp"
#include "mmesr/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>

namespace mmesr::cli
{

namespace
{

namespace fs = std::filesystem;
using nlohmann::json;

// Thrown for inputs that parse but make no sense (empty ranges, missing
// companion options); reported as usage errors.
struct UsageError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

// A fit ran but did not converge; its output is still written.
struct NotConverged : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

struct Settings
{
    PhysicalConstants constants;
    int threads = 1;
    std::uint64_t seed = 0;
    std::string format;   // empty: the subcommand's natural format
    bool quiet = false;
    std::string output;

    double census_min_prominence = 0.0;   // 0: automatic
    double census_min_q = 0.0;
    double site_threshold_sigma = 5.0;
    int site_baseline_steps = 21;
    int ransac_iterations = 2000;
    double ransac_tolerance_hz = 50e6;
    int ransac_min_inliers = 4;
    double crossing_half_window_tesla = 0.010;
};

std::optional<std::string> config_path(const std::vector<std::string>& args)
{
    for (std::size_t i = 0; i < args.size(); ++i)
    {
        if (args[i] == "--config" && i + 1 < args.size())
            return args[i + 1];
        if (args[i].rfind("--config=", 0) == 0)
            return args[i].substr(9);
    }
    if (const char* env = std::getenv("MMESR_CONFIG"); env && *env)
        return std::string(env);
    return std::nullopt;
}

void apply_config(const fs::path& path, Settings& s)
{
    const auto j = read_json(path);
    try
    {
        if (j.contains("constants"))
        {
            const auto& c = j["constants"];
            s.constants.bohr_magneton_over_h =
                c.value("bohr_magneton_over_h_hz_per_tesla", s.constants.bohr_magneton_over_h);
            s.constants.planck = c.value("planck_j_s", s.constants.planck);
            s.constants.vacuum_permeability = c.value("vacuum_permeability_n_per_a2", s.constants.vacuum_permeability);
        }
        s.threads = j.value("threads", s.threads);
        s.seed = j.value("seed", s.seed);
        s.format = j.value("format", s.format);
        if (j.contains("tolerances"))
        {
            const auto& t = j["tolerances"];
            s.census_min_prominence = t.value("census_min_prominence", s.census_min_prominence);
            s.census_min_q = t.value("census_min_q", s.census_min_q);
            s.site_threshold_sigma = t.value("site_threshold_sigma", s.site_threshold_sigma);
            s.site_baseline_steps = t.value("site_baseline_steps", s.site_baseline_steps);
            s.ransac_iterations = t.value("ransac_iterations", s.ransac_iterations);
            s.ransac_tolerance_hz = t.value("ransac_tolerance_hz", s.ransac_tolerance_hz);
            s.ransac_min_inliers = t.value("ransac_min_inliers", s.ransac_min_inliers);
            s.crossing_half_window_tesla = t.value("crossing_half_window_tesla", s.crossing_half_window_tesla);
        }
    }
    catch (const json::exception& e)
    {
        throw DataError(path.string() + ": " + e.what());
    }
    if (s.threads < 1)
        throw DataError(path.string() + ": threads must be at least 1");
    if (!s.format.empty() && s.format != "csv" && s.format != "json")
        throw DataError(path.string() + ": format must be \"csv\" or \"json\"");
}

std::string fmt(const char* pattern, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

// Field grid [bmin, bmax] with `points` samples.
std::vector<double> field_grid(double bmin, double bmax, int points)
{
    if (!(bmax > bmin))
        throw UsageError("empty field range: --bmax (" + format_double(bmax) + " T) must exceed --bmin (" +
                         format_double(bmin) + " T)");
    if (points < 2)
        throw UsageError("--points must be at least 2");
    std::vector<double> grid;
    for (int i = 0; i < points; ++i)
        grid.push_back(bmin + (bmax - bmin) * i / (points - 1));
    return grid;
}

// Automatic detection threshold: 10 robust sigma of the magnitude about its
// median, floored at 1% of the largest excursion.
double auto_prominence(const Trace& trace)
{
    const auto& y = trace.s21();
    const double base = median_of(y);
    std::vector<double> dev;
    double largest = 0.0;
    for (double v : y)
    {
        dev.push_back(v - base);
        largest = std::max(largest, std::abs(v - base));
    }
    return std::max(10.0 * robust_sigma(dev), 0.01 * largest);
}

class Runner
{
public:
    Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

    int run(const std::vector<std::string>& args);

private:
    void emit(const std::string& text)
    {
        if (s_.output.empty())
            out_ << text;
        else
            write_text(s_.output, text);
    }
    void human(const std::string& text)
    {
        if (!s_.quiet)
            err_ << text;
    }
    bool json_out(const char* natural) const { return (s_.format.empty() ? std::string(natural) : s_.format) == "json"; }

    void add_levels(CLI::App& app);
    void add_transitions(CLI::App& app);
    void add_zfs(CLI::App& app);
    void add_fit_fano(CLI::App& app);
    void add_census(CLI::App& app);
    void add_track(CLI::App& app);
    void add_sites(CLI::App& app);
    void add_identify(CLI::App& app);
    void add_fit_crossing(CLI::App& app);
    void add_concentration(CLI::App& app);
    void add_synth(CLI::App& app);

    std::ostream& out_;
    std::ostream& err_;
    Settings s_;
    std::function<void()> action_;
};

// Options shared by levels and transitions.
struct FieldRange
{
    std::string system;
    double bmin = 0.0;
    double bmax = 0.0;
    int points = 201;
};

void add_field_range(CLI::App* sub, FieldRange& r)
{
    sub->add_option("--system", r.system, "SpinSystem JSON file")->required();
    sub->add_option("--bmin", r.bmin, "lowest field (T)")->capture_default_str();
    sub->add_option("--bmax", r.bmax, "highest field (T)")->required();
    sub->add_option("--points", r.points, "number of field points")->capture_default_str();
}

void Runner::add_levels(CLI::App& app)
{
    auto r = std::make_shared<FieldRange>();
    auto* sub = app.add_subcommand("levels", "energy levels versus field (CSV: b_tesla, one column per level)");
    add_field_range(sub, *r);
    sub->callback([this, r] {
        action_ = [this, r] {
            const auto grid = field_grid(r->bmin, r->bmax, r->points);
            LevelDiagramOptions opts;
            opts.threads = s_.threads;
            opts.constants = s_.constants;
            const auto d = level_diagram(read_spin_system(r->system), grid, opts);
            for (const auto& w : d.warnings)
                err_ << "warning: level tracking ambiguous between " << format_double(w.field_lo) << " and "
                     << format_double(w.field_hi) << " T (overlap " << fmt("%.3f", w.min_overlap) << ")\n";
            if (json_out("csv"))
            {
                json j{{"field_tesla", grid}, {"levels", json::array()}};
                for (int c = 0; c < d.levels(); ++c)
                {
                    std::vector<double> e(d.energies.col(c).data(), d.energies.col(c).data() + d.energies.rows());
                    j["levels"].push_back({{"label", d.labels[static_cast<std::size_t>(c)].to_string()}, {"energy_hz", e}});
                }
                emit(j.dump(2) + "\n");
                return;
            }
            std::string csv = "b_tesla";
            for (const auto& l : d.labels)
                csv += ",E(" + l.to_string() + ")_hz";
            csv += "\n";
            for (Eigen::Index row = 0; row < d.energies.rows(); ++row)
            {
                csv += format_double(grid[static_cast<std::size_t>(row)]);
                for (int c = 0; c < d.levels(); ++c)
                    csv += "," + format_double(d.energies(row, c));
                csv += "\n";
            }
            emit(csv);
        };
    });
}

void Runner::add_transitions(CLI::App& app)
{
    auto r = std::make_shared<FieldRange>();
    auto max_dsz = std::make_shared<int>(1);
    auto* sub = app.add_subcommand("transitions", "transition frequencies versus field");
    add_field_range(sub, *r);
    sub->add_option("--max-delta-sz", *max_dsz, "largest |delta Sz| listed")->capture_default_str()->check(
        CLI::PositiveNumber);
    sub->callback([this, r, max_dsz] {
        action_ = [this, r, max_dsz] {
            const auto grid = field_grid(r->bmin, r->bmax, r->points);
            LevelDiagramOptions opts;
            opts.threads = s_.threads;
            opts.constants = s_.constants;
            const auto lines = transitions(level_diagram(read_spin_system(r->system), grid, opts), *max_dsz);
            if (json_out("csv"))
            {
                json j{{"field_tesla", grid}, {"transitions", json::array()}};
                for (const auto& l : lines)
                {
                    std::vector<double> f(l.freq_hz.data(), l.freq_hz.data() + l.freq_hz.size());
                    j["transitions"].push_back(
                        {{"transition", l.name()}, {"delta_sz", l.delta_sz}, {"zfs_hz", l.zfs_hz}, {"freq_hz", f}});
                }
                emit(j.dump(2) + "\n");
                return;
            }
            std::string csv = "transition,delta_sz,zfs_hz,b_tesla,f_hz\n";
            for (const auto& l : lines)
                for (Eigen::Index i = 0; i < l.freq_hz.size(); ++i)
                    csv += l.name() + "," + std::to_string(l.delta_sz) + "," + format_double(l.zfs_hz) + "," +
                           format_double(grid[static_cast<std::size_t>(i)]) + "," + format_double(l.freq_hz(i)) + "\n";
            emit(csv);
        };
    });
}

void Runner::add_zfs(CLI::App& app)
{
    struct Opts
    {
        std::string system;
        bool table = false;
        int max_dsz = 5;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("zfs", "zero-field splittings, or the labelled transition table with --table");
    sub->add_option("--system", o->system, "SpinSystem JSON file")->required();
    sub->add_flag("--table", o->table, "list every transition with Roman-numeral labels");
    sub->add_option("--max-delta-sz", o->max_dsz, "largest |delta Sz| in the table")->capture_default_str()->check(
        CLI::PositiveNumber);
    sub->callback([this, o] {
        action_ = [this, o] {
            const auto system = read_spin_system(o->system);
            if (o->table)
            {
                const auto rows = table_of_transitions(system, o->max_dsz);
                std::string table = "line   dSz  ZFS (GHz)  transition\n";
                json j = json::array();
                std::string csv = "line,delta_sz,zfs_hz,transition\n";
                for (const auto& r : rows)
                {
                    char buf[128];
                    std::snprintf(buf, sizeof buf, "%-6s %3d  %9.2f  %s\n", r.label.c_str(), r.delta_sz, r.zfs_hz / 1e9,
                                  r.transition.c_str());
                    table += buf;
                    csv += r.label + "," + std::to_string(r.delta_sz) + "," + format_double(r.zfs_hz) + "," + r.transition +
                           "\n";
                    j.push_back({{"line", r.label}, {"delta_sz", r.delta_sz}, {"zfs_hz", r.zfs_hz}, {"transition", r.transition}});
                }
                human(table);
                emit(json_out("csv") ? j.dump(2) + "\n" : csv);
                return;
            }
            const auto entries = zfs(system);
            std::string table = "doublets            ZFS (GHz)\n";
            std::string csv = "pair,zfs_hz\n";
            json j = json::array();
            for (const auto& e : entries)
            {
                char buf[128];
                std::snprintf(buf, sizeof buf, "%-18s %10.3f\n", e.label.c_str(), e.hz / 1e9);
                table += buf;
                csv += e.label + "," + format_double(e.hz) + "\n";
                j.push_back({{"pair", e.label}, {"zfs_hz", e.hz}});
            }
            human(table);
            emit(json_out("csv") ? j.dump(2) + "\n" : csv);
        };
    });
}

void Runner::add_fit_fano(CLI::App& app)
{
    struct Opts
    {
        std::string trace;
        std::optional<double> f0, gamma;
        double fano_q = 0.0;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("fit-fano", "fit one Fano resonance in a trace CSV (freq_hz,s21_db)");
    sub->add_option("--trace", o->trace, "trace CSV")->required();
    sub->add_option("--f0-hz", o->f0, "initial centre; default: strongest detected resonance");
    sub->add_option("--gamma-hz", o->gamma, "initial full linewidth");
    sub->add_option("--fano-q", o->fano_q, "initial Fano q")->capture_default_str();
    sub->callback([this, o] {
        action_ = [this, o] {
            const auto trace = read_trace_csv(o->trace);
            const double base = median_of(trace.s21());
            auto peaks = find_peaks(trace, auto_prominence(trace), 0.0);
            FanoParams guess;
            if (!peaks.empty())
                guess = *std::max_element(peaks.begin(), peaks.end(),
                                          [](const auto& a, const auto& b) { return std::abs(a.amp) < std::abs(b.amp); });
            else if (!o->f0)
                throw UnfittableError(o->trace + ": no resonance found; pass --f0-hz and --gamma-hz");
            if (o->f0)
            {
                guess.f0_hz = *o->f0;
                if (peaks.empty())
                {
                    guess.amp = 1.0;
                    guess.offset = base;
                }
            }
            if (o->gamma)
                guess.gamma_hz = *o->gamma;
            else if (peaks.empty())
                guess.gamma_hz = trace.span_hz() / 20.0;
            guess.fano_q = o->fano_q;
            const auto fit = fit_fano(trace, guess);
            if (json_out("json"))
                emit(to_json(fit).dump(2) + "\n");
            else
            {
                const auto& p = fit.params;
                emit("f0_hz,gamma_hz,q,amp,offset,q_factor,loss_tangent,residual_rms,converged\n" + format_double(p.f0_hz) +
                     "," + format_double(p.gamma_hz) + "," + format_double(p.fano_q) + "," + format_double(p.amp) + "," +
                     format_double(p.offset) + "," + format_double(fit.report.q_factor) + "," +
                     format_double(fit.report.loss_tangent) + "," + format_double(fit.report.residual_rms) + "," +
                     (fit.converged ? "true" : "false") + "\n");
            }
            human("f0 = " + fmt("%.9g", fit.params.f0_hz / 1e9) + " GHz, Q = " + fmt("%.4g", fit.report.q_factor) +
                  ", tan d = " + fmt("%.3g", fit.report.loss_tangent) + "\n");
            if (!fit.converged)
                throw NotConverged("fit-fano: iteration budget exhausted; the best iterate was written");
        };
    });
}

void Runner::add_census(CLI::App& app)
{
    auto trace = std::make_shared<std::string>();
    auto* sub = app.add_subcommand("census", "detect and fit every resonance of a zero-field trace (Q-factor table)");
    sub->add_option("--trace", *trace, "trace CSV")->required();
    sub->add_option("--min-prominence", s_.census_min_prominence, "linear |S21| excursion; 0 = automatic")
        ->capture_default_str();
    sub->add_option("--min-q", s_.census_min_q, "drop guesses with f0/gamma below this")->capture_default_str();
    sub->callback([this, trace] {
        action_ = [this, trace] {
            const auto t = read_trace_csv(*trace);
            CensusOptions opts;
            opts.min_prominence = s_.census_min_prominence > 0.0 ? s_.census_min_prominence : auto_prominence(t);
            opts.min_q = s_.census_min_q;
            opts.threads = s_.threads;
            const auto entries = census(t, opts);
            std::string table = "mode  f0 (GHz)        Q           tan d       status\n";
            std::string csv = "mode,f0_hz,gamma_hz,q_factor,loss_tangent,fano_q,amp,offset,residual_rms,status\n";
            json j = json::array();
            for (std::size_t i = 0; i < entries.size(); ++i)
            {
                const auto& e = entries[i];
                const auto& p = e.fit.params;
                char buf[160];
                std::snprintf(buf, sizeof buf, "%4zu  %-14.9f  %-10.4g  %-10.3g  %s\n", i, p.f0_hz / 1e9,
                              e.fit.report.q_factor, e.fit.report.loss_tangent, e.status.c_str());
                table += buf;
                csv += std::to_string(i) + "," + format_double(p.f0_hz) + "," + format_double(p.gamma_hz) + "," +
                       format_double(e.fit.report.q_factor) + "," + format_double(e.fit.report.loss_tangent) + "," +
                       format_double(p.fano_q) + "," + format_double(p.amp) + "," + format_double(p.offset) + "," +
                       format_double(e.fit.report.residual_rms) + "," + e.status + "\n";
                auto row = to_json(e.fit);
                row["mode"] = i;
                row["status"] = e.status;
                j.push_back(std::move(row));
            }
            human(table);
            emit(json_out("csv") ? j.dump(2) + "\n" : csv);
        };
    });
}

void Runner::add_track(CLI::App& app)
{
    struct Opts
    {
        std::string manifest;
        bool reverse = false;
        double window_hz = 0.0;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("track", "follow every mode of the first sweep step through a field sweep");
    sub->add_option("--manifest", o->manifest, "sweep manifest.json")->required();
    sub->add_flag("--reverse", o->reverse, "seed at the highest field and walk down");
    sub->add_option("--window-hz", o->window_hz, "search half-window; 0 = 20 linewidths")->capture_default_str();
    sub->add_option("--min-prominence", s_.census_min_prominence, "seed detection threshold; 0 = automatic")
        ->capture_default_str();
    sub->add_option("--min-q", s_.census_min_q, "seed Q threshold")->capture_default_str();
    sub->callback([this, o] {
        action_ = [this, o] {
            const auto map = load_sweep(o->manifest);
            if (map.steps.empty())
                throw DataError(o->manifest + ": the sweep has no steps");
            const auto& first = o->reverse ? map.steps.back().trace : map.steps.front().trace;
            CensusOptions co;
            co.min_prominence = s_.census_min_prominence > 0.0 ? s_.census_min_prominence : auto_prominence(first);
            co.min_q = s_.census_min_q;
            co.threads = s_.threads;
            TrackOptions to;
            to.reverse = o->reverse;
            to.window_hz = o->window_hz;
            to.threads = s_.threads;
            const auto traces = track_modes(map, seed_modes(map, co, o->reverse), to);
            std::string table = "mode  f0 (GHz)        points  gaps\n";
            for (const auto& t : traces)
            {
                char buf[128];
                std::snprintf(buf, sizeof buf, "%4d  %-14.9f  %6zu  %4zu\n", t.mode_id,
                              t.points.empty() ? 0.0 : t.points.front().params.f0_hz / 1e9, t.points.size(), t.gaps.size());
                table += buf;
            }
            human(table);
            if (!json_out("csv"))
            {
                emit(modes_csv(traces));
                return;
            }
            json j = json::array();
            for (const auto& t : traces)
            {
                json m{{"mode_id", t.mode_id}, {"step_tesla", t.step_tesla}, {"points", json::array()}, {"gaps", t.gaps}};
                for (const auto& p : t.points)
                {
                    auto pj = to_json(p.params);
                    pj["b_tesla"] = p.b_tesla;
                    m["points"].push_back(std::move(pj));
                }
                j.push_back(std::move(m));
            }
            emit(j.dump(2) + "\n");
        };
    });
}

void Runner::add_sites(CLI::App& app)
{
    auto modes = std::make_shared<std::string>();
    auto* sub = app.add_subcommand("sites", "perturbation sites from tracked modes (modes.csv)");
    sub->add_option("--modes", *modes, "modes.csv written by track")->required();
    sub->add_option("--threshold-sigma", s_.site_threshold_sigma, "robust-sigma threshold")->capture_default_str();
    sub->add_option("--baseline-steps", s_.site_baseline_steps, "moving-median window in field steps")
        ->capture_default_str();
    sub->callback([this, modes] {
        action_ = [this, modes] {
            SiteOptions opts;
            opts.threshold_sigma = s_.site_threshold_sigma;
            opts.baseline_steps = s_.site_baseline_steps;
            const auto r = extract_sites(read_modes_csv(*modes), opts);
            for (const auto& [id, msg] : r.errors)
                err_ << "warning: mode " << id << ": " << msg << "\n";
            std::string table = "mode  B (mT)    f (GHz)         strength (kHz)\n";
            for (const auto& s : r.sites)
            {
                char buf[128];
                std::snprintf(buf, sizeof buf, "%4d  %-8.2f  %-14.9f  %.3f\n", s.mode_id, s.b_tesla * 1e3, s.freq_hz / 1e9,
                              s.strength_hz / 1e3);
                table += buf;
            }
            human(table);
            if (!json_out("csv"))
            {
                emit(sites_csv(r.sites));
                return;
            }
            json j{{"sites", json::array()}, {"errors", json::array()}};
            for (const auto& s : r.sites)
                j["sites"].push_back({{"mode_id", s.mode_id},
                                      {"b_tesla", s.b_tesla},
                                      {"f_hz", s.freq_hz},
                                      {"strength_hz", s.strength_hz},
                                      {"width_tesla", s.width_tesla},
                                      {"b_start_tesla", s.b_start_tesla},
                                      {"b_end_tesla", s.b_end_tesla}});
            for (const auto& [id, msg] : r.errors)
                j["errors"].push_back({{"mode_id", id}, {"message", msg}});
            emit(j.dump(2) + "\n");
        };
    });
}

void Runner::add_identify(CLI::App& app)
{
    struct Opts
    {
        std::string sites;
        std::string db;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("identify", "group sites into spin lines and match them against a species database");
    sub->add_option("--sites", o->sites, "sites.csv written by sites")->required();
    sub->add_option("--db", o->db, "species database JSON; default: built-in Gd3+, Fe3+, Unknown A");
    sub->add_option("--iterations", s_.ransac_iterations, "RANSAC iterations")->capture_default_str();
    sub->add_option("--tolerance-hz", s_.ransac_tolerance_hz, "inlier tolerance")->capture_default_str();
    sub->add_option("--min-inliers", s_.ransac_min_inliers, "sites needed for a line")->capture_default_str();
    sub->callback([this, o] {
        action_ = [this, o] {
            const auto sites = read_sites_csv(o->sites);
            const auto db = o->db.empty() ? default_species_db()
                                          : species_db_from_json(read_json(o->db), fs::path(o->db).parent_path());
            RegressOptions ro;
            ro.iterations = s_.ransac_iterations;
            ro.tolerance_hz = s_.ransac_tolerance_hz;
            ro.min_inliers = s_.ransac_min_inliers;
            ro.seed = s_.seed;
            ro.threads = s_.threads;
            const auto reg = regress_lines(sites, ro);
            const auto ids = match_species(reg.lines, db, s_.constants);
            std::string table = "line  slope (GHz/T)  ZFS (GHz)  g_eff   sites  match\n";
            for (std::size_t i = 0; i < ids.size(); ++i)
            {
                const auto& id = ids[i];
                char buf[200];
                std::snprintf(buf, sizeof buf, "%4zu  %13.3f  %9.3f  %6.3f  %5zu  %s (%s)\n", i,
                              id.line.slope_hz_per_tesla / 1e9, id.line.intercept_hz / 1e9, id.g_eff,
                              id.line.members.size(), id.best.c_str(), id.status.c_str());
                table += buf;
            }
            table += std::to_string(reg.unassigned.size()) + " unassigned site(s)\n";
            human(table);
            if (json_out("json"))
            {
                emit(identify_json(ids, sites, reg.unassigned).dump(2) + "\n");
                return;
            }
            std::string csv = "line,slope_hz_per_tesla,intercept_hz,g_eff,sites,rms_hz,r2,best,status\n";
            for (std::size_t i = 0; i < ids.size(); ++i)
            {
                const auto& l = ids[i].line;
                csv += std::to_string(i) + "," + format_double(l.slope_hz_per_tesla) + "," + format_double(l.intercept_hz) +
                       "," + format_double(ids[i].g_eff) + "," + std::to_string(l.members.size()) + "," +
                       format_double(l.rms_hz) + "," + format_double(l.r2) + "," + ids[i].best + "," + ids[i].status + "\n";
            }
            emit(csv);
        };
    });
}

void Runner::add_fit_crossing(CLI::App& app)
{
    struct Opts
    {
        std::string points, modes, sites, system;
        std::optional<int> site;
        std::optional<double> fp, slope, intercept, crossing, g;
        std::vector<std::string> fix;
        int max_dsz = 1;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand(
        "fit-crossing", "fit an avoided crossing: --points with an initial model, or --modes/--sites with a spin line");
    sub->add_option("--points", o->points, "CSV with b_tesla,f_hz");
    sub->add_option("--modes", o->modes, "modes.csv written by track");
    sub->add_option("--sites", o->sites, "sites.csv written by sites");
    sub->add_option("--site", o->site, "fit only this row of sites.csv (0-based)");
    sub->add_option("--system", o->system, "SpinSystem JSON used for the spin-line slope");
    sub->add_option("--max-delta-sz", o->max_dsz, "transitions considered for the slope")->capture_default_str();
    sub->add_option("--fp-hz", o->fp, "initial photon frequency");
    sub->add_option("--slope-hz-per-tesla", o->slope, "spin-line slope (fixed with --modes/--sites)");
    sub->add_option("--intercept-hz", o->intercept, "initial spin-line intercept");
    sub->add_option("--crossing-tesla", o->crossing, "initial crossing field (alternative to --intercept-hz)");
    sub->add_option("--g-hz", o->g, "initial coupling");
    sub->add_option("--fix", o->fix, "parameters held fixed: fp, intercept, slope, g")
        ->check(CLI::IsMember({"fp", "intercept", "slope", "g"}));
    sub->add_option("--half-window-tesla", s_.crossing_half_window_tesla, "tracked points used around a site")
        ->capture_default_str();
    sub->callback([this, o] {
        action_ = [this, o] {
            CrossingFitOptions fo;
            for (const auto& name : o->fix)
                fo.fixed[name == "fp" ? 0 : name == "intercept" ? 1 : name == "slope" ? 2 : 3] = true;

            json results = json::array();
            std::string table = "B_c (T)      g (MHz)          fp (GHz)         rms (Hz)\n";
            bool all_converged = true;
            auto record = [&](const CrossingFit& fit, json extra) {
                auto j = to_json(fit);
                j.update(extra);
                results.push_back(std::move(j));
                char buf[200];
                std::snprintf(buf, sizeof buf, "%-11.6f  %.4f +- %.4f  %-15.9f  %.1f\n", fit.model.crossing_field(),
                              fit.model.g_hz / 1e6, fit.sigma[3] / 1e6, fit.model.fp_hz / 1e9, fit.residual_rms);
                table += buf;
                all_converged = all_converged && fit.converged;
            };

            if (!o->points.empty())
            {
                if (!o->fp || !o->slope || !o->g || (!o->intercept && !o->crossing))
                    throw UsageError("fit-crossing --points needs --fp-hz, --slope-hz-per-tesla, --g-hz and "
                                     "--intercept-hz or --crossing-tesla as the initial model");
                const auto t = read_csv(o->points);
                const auto cb = t.column("b_tesla"), cf = t.column("f_hz");
                std::vector<CrossingPoint> pts;
                for (std::size_t r = 0; r < t.rows.size(); ++r)
                    pts.push_back({t.number(r, cb), t.number(r, cf)});
                const double intercept = o->intercept ? *o->intercept : *o->fp - *o->slope * *o->crossing;
                record(fit_crossing(pts, CrossingModel{*o->fp, intercept, *o->slope, *o->g}, fo), json::object());
            }
            else if (!o->modes.empty() && !o->sites.empty())
            {
                std::optional<SpinSystem> system;
                if (!o->system.empty())
                    system = read_spin_system(o->system);
                else if (!o->slope)
                    throw UsageError("fit-crossing --modes/--sites needs --system or --slope-hz-per-tesla");
                const auto traces = read_modes_csv(o->modes);
                const auto sites = read_sites_csv(o->sites);
                SiteCrossingOptions so;
                so.half_window_tesla = s_.crossing_half_window_tesla;
                so.slope_hz_per_tesla = o->slope;
                so.max_delta_sz = o->max_dsz;
                so.fit = fo;
                if (o->site && (*o->site < 0 || *o->site >= static_cast<int>(sites.size())))
                    throw UsageError("--site " + std::to_string(*o->site) + " is out of range (" +
                                     std::to_string(sites.size()) + " sites)");
                for (std::size_t k = 0; k < sites.size(); ++k)
                {
                    if (o->site && static_cast<int>(k) != *o->site)
                        continue;
                    const auto& site = sites[k];
                    const auto it = std::find_if(traces.begin(), traces.end(),
                                                 [&](const ModeTrace& m) { return m.mode_id == site.mode_id; });
                    if (it == traces.end())
                        throw DataError(o->sites + ": site " + std::to_string(k) + " refers to mode " +
                                        std::to_string(site.mode_id) + ", absent from " + o->modes);
                    try
                    {
                        const auto sc = fit_site_crossing(*it, site, system ? &*system : nullptr, so);
                        record(sc.fit, {{"site", k}, {"mode_id", site.mode_id}, {"spin_line", sc.spin_line}, {"points", sc.points}});
                    }
                    catch (const UnfittableError& e)
                    {
                        if (o->site)
                            throw;
                        err_ << "warning: site " << k << ": " << e.what() << "\n";
                        results.push_back({{"site", k}, {"mode_id", site.mode_id}, {"error", e.what()}});
                        all_converged = false;
                    }
                }
            }
            else
                throw UsageError("fit-crossing needs --points, or both --modes and --sites");

            human(table);
            if (json_out("json"))
                emit(results.dump(2) + "\n");
            else
            {
                std::string csv = "site,crossing_tesla,sigma_crossing_tesla,g_hz,sigma_g_hz,fp_hz,sigma_fp_hz,"
                                  "spin_intercept_hz,spin_slope_hz_per_tesla,residual_rms_hz,converged\n";
                for (std::size_t i = 0; i < results.size(); ++i)
                {
                    const auto& r = results[i];
                    if (r.contains("error"))
                        continue;
                    csv += std::to_string(r.value("site", i)) + "," + format_double(r["crossing_tesla"]) + "," +
                           format_double(r["sigma_crossing_tesla"]) + "," + format_double(r["g_hz"]) + "," +
                           format_double(r["sigma_g_hz"]) + "," + format_double(r["fp_hz"]) + "," +
                           format_double(r["sigma_fp_hz"]) + "," + format_double(r["spin_intercept_hz"]) + "," +
                           format_double(r["spin_slope_hz_per_tesla"]) + "," + format_double(r["residual_rms_hz"]) + "," +
                           (r["converged"].get<bool>() ? "true" : "false") + "\n";
                }
                emit(csv);
            }
            if (!all_converged)
                throw NotConverged("fit-crossing: at least one fit failed or did not converge");
        };
    });
}

void Runner::add_concentration(CLI::App& app)
{
    auto in = std::make_shared<ConcentrationInput>();
    auto* sub = app.add_subcommand("concentration", "spin density from a fitted coupling rate");
    sub->add_option("--g-hz", in->g_hz, "coupling rate g")->required();
    sub->add_option("--fp-hz", in->fp_hz, "photon mode frequency")->required();
    sub->add_option("--gl", in->lande_g, "Lande g factor")->required();
    sub->add_option("--xi", in->filling_factor, "filling factor (0, 1]")->capture_default_str();
    sub->add_option("--sigma-g-hz", in->sigma_g_hz, "uncertainty of g");
    sub->add_option("--sigma-fp-hz", in->sigma_fp_hz, "uncertainty of fp");
    sub->add_option("--sigma-gl", in->sigma_lande_g, "uncertainty of the Lande g factor");
    sub->add_option("--sigma-xi", in->sigma_filling_factor, "uncertainty of the filling factor");
    sub->callback([this, in] {
        action_ = [this, in] {
            const auto c = concentration(*in, s_.constants);
            human("n = " + fmt("%.4g", c.per_cm3) + " +- " + fmt("%.3g", c.sigma_per_cm3) + " cm^-3\n");
            if (json_out("json"))
                emit(to_json(c).dump(2) + "\n");
            else
                emit("per_cm3,sigma_per_cm3\n" + format_double(c.per_cm3) + "," + format_double(c.sigma_per_cm3) + "\n");
        };
    });
}

void Runner::add_synth(CLI::App& app)
{
    struct Opts
    {
        std::string scenario, out;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("synth", "render a synthetic sweep (manifest, traces, ground_truth.json)");
    sub->add_option("--scenario", o->scenario, "scenario JSON")->required();
    sub->add_option("--out", o->out, "output directory")->required();
    sub->callback([this, o, sub] {
        action_ = [this, o, sub] {
            auto scenario = scenario_from_json(read_json(o->scenario), fs::path(o->scenario).parent_path());
            // an explicit --seed wins over the scenario's own
            if (sub->get_parent()->count("--seed") > 0)
                scenario.seed = s_.seed;
            const auto r = synth_sweep(scenario, o->out, s_.threads);
            for (const auto& w : r.truth.warnings)
                err_ << "warning: " << w << "\n";
            human(std::to_string(r.truth.fields_tesla.size()) + " steps, " + std::to_string(r.truth.crossings.size()) +
                  " crossing(s) written to " + o->out + "\n");
            json j{{"manifest", r.manifest.string()},
                   {"ground_truth", (fs::path(o->out) / "ground_truth.json").string()},
                   {"steps", r.truth.fields_tesla.size()},
                   {"crossings", r.truth.crossings.size()},
                   {"warnings", r.truth.warnings}};
            if (json_out("json"))
                emit(j.dump(2) + "\n");
            else
                emit("manifest,steps,crossings\n" + r.manifest.string() + "," + std::to_string(r.truth.fields_tesla.size()) +
                     "," + std::to_string(r.truth.crossings.size()) + "\n");
        };
    });
}

int Runner::run(const std::vector<std::string>& args)
{
    CLI::App app{"Multi-mode microwave ESR analysis: spin Hamiltonians, resonance fits, sweeps, crossings, species.",
                 "mmesr"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", "mmesr 1.0.0");

    std::string config_file;
    try
    {
        if (auto path = config_path(args))
        {
            config_file = *path;
            apply_config(*path, s_);
        }
    }
    catch (const DataError& e)
    {
        err_ << "error: " << e.what() << "\nhint: fix the config file or unset MMESR_CONFIG\n";
        return kExitData;
    }

    app.add_option("--config", config_file, "JSON config (default: $MMESR_CONFIG)");
    app.add_flag("-q,--quiet", s_.quiet, "no human-readable tables on stderr");
    app.add_option("--seed", s_.seed, "RNG seed")->capture_default_str();
    app.add_option("--threads", s_.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--format", s_.format, "output format: csv or json")->check(CLI::IsMember({"csv", "json"}));
    app.add_option("-o,--output", s_.output, "write the machine-readable output here instead of stdout");

    add_levels(app);
    add_transitions(app);
    add_zfs(app);
    add_fit_fano(app);
    add_census(app);
    add_track(app);
    add_sites(app);
    add_identify(app);
    add_fit_crossing(app);
    add_concentration(app);
    add_synth(app);

    try
    {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    }
    catch (const CLI::ParseError& e)
    {
        const int code = app.exit(e, out_, err_);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try
    {
        action_();
        return kExitOk;
    }
    catch (const UsageError& e)
    {
        err_ << "usage error: " << e.what() << "\nhint: run `mmesr <subcommand> --help`\n";
        return kExitUsage;
    }
    catch (const std::invalid_argument& e)
    {
        err_ << "usage error: " << e.what() << "\nhint: run `mmesr <subcommand> --help`\n";
        return kExitUsage;
    }
    catch (const NotConverged& e)
    {
        err_ << "error: " << e.what() << "\nhint: supply a closer initial guess or check the data\n";
        return kExitNotConverged;
    }
    catch (const UnfittableError& e)
    {
        err_ << "error: " << e.what() << "\nhint: supply a closer initial guess or check the data\n";
        return kExitNotConverged;
    }
    catch (const DataError& e)
    {
        err_ << "data error: " << e.what() << "\nhint: check that the file exists and has the documented layout\n";
        return kExitData;
    }
    catch (const std::exception& e)
    {
        err_ << "data error: " << e.what() << "\n";
        return kExitData;
    }
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    Runner runner(out, err);
    return runner.run(args);
}

} // namespace mmesr::cli
