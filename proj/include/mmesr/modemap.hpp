#ifndef MMESR_MODEMAP_HPP
#define MMESR_MODEMAP_HPP

#include "mmesr/lineshape.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace mmesr
{

struct SweepStep
{
    double b_tesla = 0.0;
    Trace trace;
    std::string file;   // trace file name relative to the manifest
};

struct SweepMap
{
    double step_tesla = 0.0;
    std::string direction = "up";   // acquisition order recorded in the manifest
    std::vector<SweepStep> steps;   // always ascending in field
};

/// Manifest: {"step_tesla": 0.001, "direction": "up",
///            "steps": [{"b_tesla": 0.0, "trace": "b0000.csv"}, ...]}
/// Throws DataError naming the offending file (and line for CSV problems).
SweepMap load_sweep(const std::filesystem::path& manifest);

/// Writes manifest.json plus one trace CSV per step into dir, using each
/// step's file name (generated as bNNNN.csv when empty). Returns the manifest path.
std::filesystem::path save_sweep(const SweepMap& map, const std::filesystem::path& dir);

struct TrackPoint
{
    double b_tesla = 0.0;
    FanoParams params;
};

struct ModeTrace
{
    int mode_id = 0;
    double step_tesla = 0.0;
    std::vector<TrackPoint> points;                 // locked steps, ascending field
    std::vector<std::pair<double, double>> gaps;    // [first, last] field of each lost run
};

struct TrackOptions
{
    double window_hz = 0.0;     // <= 0: 20 linewidths of each seed
    bool reverse = false;       // walk the sweep from the highest field down
    int threads = 1;
    int max_window_doublings = 6;
};

/// Follows each seed through the sweep. Every step is refit from the
/// predicted centre (the previous f0 while locked; a linear extrapolation of
/// the last 5 locked points while lost). The search window doubles for each
/// consecutive missed step, up to 2^max_window_doublings, and is widened by
/// the distance between the prediction and the last locked centre.
std::vector<ModeTrace> track_modes(const SweepMap& map, const std::vector<FanoParams>& seeds,
                                   const TrackOptions& opts = {});

struct PerturbationSite
{
    int mode_id = 0;
    double b_tesla = 0.0;
    double freq_hz = 0.0;
    double strength_hz = 0.0;   // |f0 - baseline| at the site
    double width_tesla = 0.0;
    double b_start_tesla = 0.0;
    double b_end_tesla = 0.0;
};

struct SiteOptions
{
    double threshold_sigma = 5.0;
    int baseline_steps = 21;
};

struct SiteExtraction
{
    std::vector<PerturbationSite> sites;              // ordered by mode, then field
    std::vector<std::pair<int, std::string>> errors;  // (mode_id, reason)
};

/// Baseline-subtracted f0(B) per mode: moving median over baseline_steps
/// field steps, robust scale 1.4826*MAD (floored at 1e-3 of the median
/// linewidth so noiseless data does not produce spurious sites). A site is a
/// run of above-threshold points, bridging tracking gaps, located at the
/// largest deviation.
SiteExtraction extract_sites(const std::vector<ModeTrace>& traces, const SiteOptions& opts = {});

std::string modes_csv(const std::vector<ModeTrace>& traces);
std::string sites_csv(const std::vector<PerturbationSite>& sites);

/// Inverse of modes_csv. Gaps are not stored, so they come back empty; the
/// field step is taken as the smallest spacing of each mode.
std::vector<ModeTrace> read_modes_csv(const std::filesystem::path& path);
/// Inverse of sites_csv; b_start/b_end default to the site field when absent.
std::vector<PerturbationSite> read_sites_csv(const std::filesystem::path& path);

} // namespace mmesr

#endif
