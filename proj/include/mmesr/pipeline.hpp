#ifndef MMESR_PIPELINE_HPP
#define MMESR_PIPELINE_HPP

// Glue between the modules: seeding the tracker from the first sweep step
// and turning a perturbation site into a crossing fit.

#include "mmesr/coupling.hpp"
#include "mmesr/modemap.hpp"
#include "mmesr/spinham.hpp"

#include <optional>
#include <vector>

namespace mmesr
{

/// Census of the first step (lowest field, or highest when reverse) whose
/// fits converged; these seed track_modes.
std::vector<FanoParams> seed_modes(const SweepMap& map, const CensusOptions& opts, bool reverse = false);

struct SiteCrossingOptions
{
    double half_window_tesla = 0.010;           // tracked points used around the site
    std::optional<double> slope_hz_per_tesla;   // fixes the spin-line slope when set
    int max_delta_sz = 1;                       // for the slope lookup in a SpinSystem
    CrossingFitOptions fit;
};

struct SiteCrossing
{
    PerturbationSite site;
    CrossingFit fit;
    std::string spin_line;   // transition used for the slope, when looked up
    int points = 0;
};

/// Fits the avoided crossing behind one site from the mode's tracked f0(B).
/// The slope comes from opts.slope_hz_per_tesla, else from the transition of
/// `system` nearest the site frequency; with neither it throws
/// std::invalid_argument. The fit is started
/// from a small grid of crossing fields and couplings derived from the site,
/// keeping the lowest residual.
SiteCrossing fit_site_crossing(const ModeTrace& trace, const PerturbationSite& site, const SpinSystem* system,
                               const SiteCrossingOptions& opts = {});

} // namespace mmesr

#endif
