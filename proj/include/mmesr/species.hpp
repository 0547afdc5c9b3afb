#ifndef MMESR_SPECIES_HPP
#define MMESR_SPECIES_HPP

#include "mmesr/modemap.hpp"
#include "mmesr/spinham.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mmesr
{

struct LineFit
{
    double slope_hz_per_tesla = 0.0;
    double intercept_hz = 0.0;     // the zero-field intercept, read as a ZFS
    double sigma_slope = 0.0;
    double sigma_intercept = 0.0;
    std::vector<int> members;      // indices into the site list, ascending
    std::vector<double> b_tesla;   // member coordinates, same order
    std::vector<double> f_hz;
    double rms_hz = 0.0;
    double r2 = 0.0;
};

struct RegressOptions
{
    int iterations = 2000;
    double tolerance_hz = 50e6;
    int min_inliers = 4;
    std::uint64_t seed = 0;
    int threads = 1;
};

struct LineRegression
{
    std::vector<LineFit> lines;
    std::vector<int> unassigned;
};

/// Greedy RANSAC: the pair hypothesis with the most inliers (then smallest
/// squared residual) is refined by least squares, its inliers removed, and
/// the search repeated until fewer than min_inliers sites agree. When the
/// remaining sites have no more pairs than `iterations`, every pair is tried.
LineRegression regress_lines(const std::vector<PerturbationSite>& sites, const RegressOptions& opts = {});

/// slope / (muB/h * delta_sz). Throws std::invalid_argument for delta_sz < 1.
double effective_g(double slope_hz_per_tesla, int delta_sz, const PhysicalConstants& constants = kCodata);

struct SpeciesRecord
{
    std::string name;
    double lande_g = 0.0;
    std::vector<double> zfs_list_hz;
    std::optional<SpinSystem> system;   // when set, lines are matched against its transition curves
    double tolerance_g = 0.2;
    double tolerance_zfs_hz = 0.2e9;    // for system records: rms distance to the curve
    bool unconfirmed = false;
    int delta_sz = 1;                   // for system records: largest delta_sz considered
};

/// Gd3+ (full Hamiltonian), Fe3+ and the unconfirmed "Unknown A".
std::vector<SpeciesRecord> default_species_db();

std::vector<SpeciesRecord> species_db_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const std::vector<SpeciesRecord>& db);

struct SpeciesMatch
{
    std::string species;
    std::string transition;   // system records only
    bool unconfirmed = false;
    double g_eff = 0.0;
    double zfs_hz = 0.0;      // record value closest to the line intercept
    double z = 0.0;           // combined z-score, lower is better
};

struct LineIdentification
{
    LineFit line;
    double g_eff = 0.0;               // at delta_sz = 1
    std::vector<SpeciesMatch> matches;  // ascending z
    std::string status;               // "confirmed", "unconfirmed" or "unknown", from the best match
    std::string best;                 // species name, "unknown" when unmatched
};

/// Per line: every record the line satisfies, ranked by z. A simple record
/// matches when |g_eff - lande_g| <= tolerance_g and the nearest listed ZFS is
/// within tolerance_zfs_hz; z combines both deviations in units of the
/// tolerance widened by the line-fit uncertainty. A system record matches a
/// transition when the member sites lie within tolerance_zfs_hz rms of its
/// curve; z is that rms over the tolerance. Throws std::invalid_argument for
/// an empty database.
std::vector<LineIdentification> match_species(const std::vector<LineFit>& lines, const std::vector<SpeciesRecord>& db,
                                              const PhysicalConstants& constants = kCodata);

struct TransitionRow
{
    std::string label;        // Roman numeral, I, II, ...
    int delta_sz = 0;
    double zfs_hz = 0.0;
    HalfInteger lower;
    HalfInteger upper;
    std::string transition;   // "|+5/2>->|+3/2>"
};

/// Every transition up to max_delta_sz, grouped by delta_sz and labelled in
/// ascending ZFS within each group (ties by transition name).
std::vector<TransitionRow> table_of_transitions(const SpinSystem& system, int max_delta_sz);

std::string roman_numeral(int n);

nlohmann::json to_json(const LineFit& line);
nlohmann::json identify_json(const std::vector<LineIdentification>& ids, const std::vector<PerturbationSite>& sites,
                             const std::vector<int>& unassigned);

} // namespace mmesr

#endif
