#include "mmesr/pipeline.hpp"

#include "mmesr/errors.hpp"
#include "mmesr/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace mmesr
{

std::vector<FanoParams> seed_modes(const SweepMap& map, const CensusOptions& opts, bool reverse)
{
    if (map.steps.empty())
        return {};
    const auto& first = reverse ? map.steps.back() : map.steps.front();
    std::vector<FanoParams> seeds;
    for (const auto& e : census(first.trace, opts))
        if (e.status == "ok")
            seeds.push_back(e.fit.params);
    return seeds;
}

SiteCrossing fit_site_crossing(const ModeTrace& trace, const PerturbationSite& site, const SpinSystem* system,
                               const SiteCrossingOptions& opts)
{
    SiteCrossing out;
    out.site = site;
    std::vector<CrossingPoint> pts;
    std::vector<double> f0s, spacing;
    for (const auto& p : trace.points)
        if (std::abs(p.b_tesla - site.b_tesla) <= opts.half_window_tesla * (1.0 + 1e-9))
        {
            if (!pts.empty())
                spacing.push_back(p.b_tesla - pts.back().b_tesla);
            pts.push_back({p.b_tesla, p.params.f0_hz});
            f0s.push_back(p.params.f0_hz);
        }
    out.points = static_cast<int>(pts.size());
    if (pts.size() < 8)
        throw UnfittableError("fit_site_crossing: only " + std::to_string(pts.size()) +
                              " tracked points near the site, need at least 8");

    double slope = 0.0;
    if (opts.slope_hz_per_tesla)
        slope = *opts.slope_hz_per_tesla;
    else if (system)
    {
        const auto line = nearest_transition(*system, site.b_tesla, site.freq_hz, opts.max_delta_sz);
        slope = line.slope_hz_per_tesla;
        out.spin_line = line.name;
    }
    else
        throw std::invalid_argument("fit_site_crossing: a spin-line slope or a spin system is required");
    if (slope == 0.0)
        throw UnfittableError("fit_site_crossing: spin line has zero slope at the site");

    const double fp = median_of(f0s);
    const double step = trace.step_tesla > 0.0 ? trace.step_tesla : median_of(spacing);
    const double g0 = std::sqrt(std::max(site.strength_hz, 1.0) * std::abs(slope) * step);

    CrossingFitOptions fit_opts = opts.fit;
    fit_opts.fixed[2] = true;
    std::optional<CrossingFit> best;
    std::string last_error;
    for (int k = -4; k <= 4; ++k)
        for (double gf : {0.3, 1.0, 3.0})
        {
            const double bc = site.b_tesla + 0.25 * k * step;
            const CrossingModel guess{fp, fp - slope * bc, slope, gf * g0};
            try
            {
                auto fit = fit_crossing(pts, guess, fit_opts);
                if (!best || fit.residual_rms < best->residual_rms)
                    best = std::move(fit);
            }
            catch (const UnfittableError& e)
            {
                last_error = e.what();
            }
        }
    if (!best)
        throw UnfittableError(last_error);
    out.fit = std::move(*best);
    return out;
}

} // namespace mmesr
