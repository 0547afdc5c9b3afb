#include "mmesr/coupling.hpp"

#include "mmesr/errors.hpp"
#include "mmesr/least_squares.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mmesr
{

NormalModes normal_modes(double ws, double wp, double g)
{
    // 4 Dps^2 ws^2 wp^2 = 16 g^2 ws^2 since Dps = 2g/wp.
    const double x = (ws - wp) * (ws + wp);
    const double c = 16.0 * g * g * ws * ws;
    const double d = std::sqrt(x * x + c);
    double dplus, dminus;   // w+-^2 - wp^2
    if (x >= 0.0)
    {
        dplus = 0.5 * (x + d);
        dminus = (x + d) > 0.0 ? -0.5 * c / (x + d) : 0.0;
    }
    else
    {
        dminus = 0.5 * (x - d);
        dplus = 0.5 * c / (d - x);
    }
    auto root = [wp](double delta) { return wp + delta / (std::sqrt(wp * wp + delta) + wp); };
    return {root(dplus), root(dminus)};
}

NormalModes normal_modes(const CrossingModel& m, double b_tesla)
{
    return normal_modes(m.spin_hz(b_tesla), m.fp_hz, m.g_hz);
}

double photon_like_branch(const CrossingModel& m, double b_tesla)
{
    const auto nm = normal_modes(m, b_tesla);
    return m.spin_hz(b_tesla) > m.fp_hz ? nm.minus_hz : nm.plus_hz;
}

double CrossingFit::sigma_delta_ps() const
{
    // Dps = 2g/fp
    const double dg = 2.0 / model.fp_hz;
    const double dfp = -2.0 * model.g_hz / (model.fp_hz * model.fp_hz);
    const double var = dg * dg * covariance(3, 3) + dfp * dfp * covariance(0, 0) + 2.0 * dg * dfp * covariance(0, 3);
    return std::sqrt(std::max(var, 0.0));
}

double CrossingFit::sigma_crossing_field() const
{
    // Bc = (fp - a)/b
    const double b = model.spin_slope_hz_per_tesla;
    Eigen::Vector4d grad(1.0 / b, -1.0 / b, -model.crossing_field() / b, 0.0);
    return std::sqrt(std::max(grad.dot(covariance * grad), 0.0));
}

CrossingFit fit_crossing(const std::vector<CrossingPoint>& points, const CrossingModel& guess,
                         const CrossingFitOptions& opts)
{
    const std::size_t n = points.size();
    if (n < 8)
        throw UnfittableError("fit_crossing: need at least 8 points, got " + std::to_string(n));
    if (!(guess.g_hz > 0.0) || !(guess.fp_hz > 0.0) || guess.spin_slope_hz_per_tesla == 0.0)
        throw std::invalid_argument("fit_crossing: guess needs positive fp and g and a nonzero spin slope");

    auto min_detuning = [&](const CrossingModel& m) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : points)
            best = std::min(best, std::abs(m.spin_hz(p.b_tesla) - m.fp_hz));
        return best;
    };
    if (min_detuning(guess) > opts.max_detuning_g * guess.g_hz)
        throw UnfittableError("fit_crossing: every point is detuned by more than " +
                              std::to_string(opts.max_detuning_g) + " g from the spin line; no crossing in the data");

    // Internal coordinates: offsets in units of g for fp and the spin line at
    // the mean field, slope in units of g per field span.
    double b_mean = 0.0, b_min = points[0].b_tesla, b_max = points[0].b_tesla;
    for (const auto& p : points)
    {
        b_mean += p.b_tesla;
        b_min = std::min(b_min, p.b_tesla);
        b_max = std::max(b_max, p.b_tesla);
    }
    b_mean /= static_cast<double>(n);
    const double f_scale = guess.g_hz;
    const double b_span = std::max(b_max - b_min, 1e-12);
    const double slope_scale = f_scale / b_span;
    const double c0 = guess.spin_hz(b_mean);

    std::vector<int> free_idx;
    for (int i = 0; i < 4; ++i)
        if (!opts.fixed[static_cast<std::size_t>(i)])
            free_idx.push_back(i);
    const Eigen::Index nf = static_cast<Eigen::Index>(free_idx.size());
    if (nf == 0)
        throw std::invalid_argument("fit_crossing: all parameters fixed");
    const Eigen::Vector4d unit(f_scale, f_scale, slope_scale, f_scale);

    auto model_of = [&](const Eigen::VectorXd& u) {
        Eigen::Vector4d full = Eigen::Vector4d::Zero();
        for (Eigen::Index k = 0; k < nf; ++k)
            full[free_idx[static_cast<std::size_t>(k)]] = u[k];
        CrossingModel m;
        m.fp_hz = guess.fp_hz + full[0] * unit[0];
        const double c = c0 + full[1] * unit[1];
        m.spin_slope_hz_per_tesla = guess.spin_slope_hz_per_tesla + full[2] * unit[2];
        m.spin_intercept_hz = c - m.spin_slope_hz_per_tesla * b_mean;
        m.g_hz = guess.g_hz + full[3] * unit[3];
        return m;
    };

    std::vector<int> branch(n, 1);
    auto nearer = [&](const CrossingModel& m, std::size_t i) {
        const auto nm = normal_modes(m, points[i].b_tesla);
        return std::abs(points[i].f_hz - nm.plus_hz) <= std::abs(points[i].f_hz - nm.minus_hz) ? 1 : -1;
    };

    auto residual = [&](const Eigen::VectorXd& u) {
        const CrossingModel m = model_of(u);
        Eigen::VectorXd r(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
        {
            const auto nm = normal_modes(m, points[i].b_tesla);
            r[static_cast<Eigen::Index>(i)] = ((branch[i] > 0 ? nm.plus_hz : nm.minus_hz) - points[i].f_hz) / f_scale;
        }
        return r;
    };
    // First pass re-assigns every point to its nearer branch at each evaluation,
    // so a poor starting crossing field cannot lock in a wrong assignment.
    auto nearest_residual = [&](const Eigen::VectorXd& u) {
        const CrossingModel m = model_of(u);
        Eigen::VectorXd r(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
        {
            const auto nm = normal_modes(m, points[i].b_tesla);
            const double dp = nm.plus_hz - points[i].f_hz;
            const double dm = nm.minus_hz - points[i].f_hz;
            r[static_cast<Eigen::Index>(i)] = (std::abs(dp) <= std::abs(dm) ? dp : dm) / f_scale;
        }
        return r;
    };

    LeastSquaresOptions lso;
    lso.max_iterations = opts.max_iterations;
    lso.parameter_tolerance = opts.parameter_tolerance;
    const Eigen::VectorXd scale = Eigen::VectorXd::Ones(nf);
    const auto first = levenberg_marquardt(nearest_residual, Eigen::VectorXd::Zero(nf), scale, lso);
    Eigen::VectorXd u = first.params;
    for (std::size_t i = 0; i < n; ++i)
        branch[i] = nearer(model_of(u), i);
    LeastSquaresResult res;
    int total_iterations = first.iterations;
    bool settled = false;
    for (int round = 0; round <= opts.max_reassignments; ++round)
    {
        res = levenberg_marquardt(residual, u, scale, lso);
        u = res.params;
        total_iterations += res.iterations;
        const CrossingModel m = model_of(u);
        const double rms = std::sqrt(res.cost / static_cast<double>(n)) * f_scale;
        const double sigma = opts.sigma_hz > 0.0 ? opts.sigma_hz : rms;
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i)
        {
            const auto nm = normal_modes(m, points[i].b_tesla);
            const double d_own = std::abs(points[i].f_hz - (branch[i] > 0 ? nm.plus_hz : nm.minus_hz));
            const double d_other = std::abs(points[i].f_hz - (branch[i] > 0 ? nm.minus_hz : nm.plus_hz));
            if (d_other + 3.0 * sigma < d_own)
            {
                branch[i] = -branch[i];
                changed = true;
            }
        }
        if (!changed)
        {
            settled = true;
            break;
        }
    }

    CrossingFit out;
    out.model = model_of(u);
    out.branch = branch;
    out.residual_rms = std::sqrt(res.cost / static_cast<double>(n)) * f_scale;
    out.iterations = total_iterations;
    out.converged = res.converged && settled;

    if (std::all_of(branch.begin(), branch.end(), [&](int b) { return b == branch[0]; }))
        throw UnfittableError("fit_crossing: all points lie on one branch; g is not identifiable");
    if (min_detuning(out.model) > opts.max_detuning_g * std::abs(out.model.g_hz))
        throw UnfittableError("fit_crossing: fitted spin line never comes within " +
                              std::to_string(opts.max_detuning_g) + " g of the mode");

    const auto cov = covariance_from_jacobian(res.jacobian, res.cost);
    if (!cov)
        throw UnfittableError("fit_crossing: rank-deficient Jacobian; parameters not identifiable");

    // d(fp, a, b, g)/d(internal); g enters squared so its sign is arbitrary.
    const double g_sign = out.model.g_hz < 0.0 ? -1.0 : 1.0;
    out.model.g_hz = std::abs(out.model.g_hz);
    Eigen::Matrix4d full_jac;
    full_jac << unit[0], 0, 0, 0,
                0, unit[1], -b_mean * unit[2], 0,
                0, 0, unit[2], 0,
                0, 0, 0, g_sign * unit[3];
    Eigen::MatrixXd jac(4, nf);
    for (Eigen::Index k = 0; k < nf; ++k)
        jac.col(k) = full_jac.col(free_idx[static_cast<std::size_t>(k)]);
    out.covariance = jac * (*cov) * jac.transpose();
    for (int i = 0; i < 4; ++i)
        out.sigma[static_cast<std::size_t>(i)] = std::sqrt(std::max(out.covariance(i, i), 0.0));
    return out;
}

namespace
{

void check_positive(double v, const char* name)
{
    if (!(v > 0.0) || !std::isfinite(v))
        throw std::invalid_argument(std::string("concentration: ") + name + " must be positive and finite");
}

double conversion(double fp_hz, double lande_g, double xi, const PhysicalConstants& c)
{
    const double mub = c.bohr_magneton();
    return 4.0 * c.reduced_planck() / (lande_g * lande_g * mub * mub * c.vacuum_permeability * fp_hz * xi) * 1e-6;
}

} // namespace

Concentration concentration(const ConcentrationInput& in, const PhysicalConstants& c)
{
    check_positive(in.g_hz, "g_hz");
    check_positive(in.fp_hz, "fp_hz");
    check_positive(in.lande_g, "lande_g");
    check_positive(in.filling_factor, "filling_factor");
    if (in.filling_factor > 1.0)
        throw std::invalid_argument("concentration: filling_factor must not exceed 1");
    if (in.sigma_g_hz < 0 || in.sigma_fp_hz < 0 || in.sigma_lande_g < 0 || in.sigma_filling_factor < 0)
        throw std::invalid_argument("concentration: uncertainties must be non-negative");

    Concentration out;
    out.per_cm3 = in.g_hz * in.g_hz * conversion(in.fp_hz, in.lande_g, in.filling_factor, c);
    const double rel = std::hypot(2.0 * in.sigma_g_hz / in.g_hz, in.sigma_fp_hz / in.fp_hz,
                                  2.0 * in.sigma_lande_g / in.lande_g);
    out.sigma_per_cm3 = out.per_cm3 * std::hypot(rel, in.sigma_filling_factor / in.filling_factor);
    return out;
}

double coupling_from_concentration(double per_cm3, double fp_hz, double lande_g, double filling_factor,
                                   const PhysicalConstants& c)
{
    check_positive(per_cm3, "concentration");
    return std::sqrt(per_cm3 / conversion(fp_hz, lande_g, filling_factor, c));
}

} // namespace mmesr
