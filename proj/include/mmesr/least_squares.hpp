#ifndef MMESR_LEAST_SQUARES_HPP
#define MMESR_LEAST_SQUARES_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace mmesr
{

struct LeastSquaresOptions
{
    int max_iterations = 200;
    double parameter_tolerance = 1e-10;  // on |delta_i| / (|p_i| + scale_i)
    double initial_damping = 1e-3;
    double damping_factor = 10.0;
    double jacobian_step = 1e-6;         // fraction of the parameter scale
};

struct LeastSquaresResult
{
    Eigen::VectorXd params;
    Eigen::VectorXd residuals;
    Eigen::MatrixXd jacobian;
    double cost = 0.0;                   // sum of squared residuals
    int iterations = 0;
    bool converged = false;
};

/// Central-difference Jacobian of residual(p); column i uses step * scale[i].
template <typename Residual>
Eigen::MatrixXd numeric_jacobian(Residual& residual, const Eigen::VectorXd& p, const Eigen::VectorXd& scale,
                                 double step, Eigen::Index rows)
{
    Eigen::MatrixXd jac(rows, p.size());
    Eigen::VectorXd probe = p;
    for (Eigen::Index i = 0; i < p.size(); ++i)
    {
        const double h = step * scale[i];
        probe[i] = p[i] + h;
        const Eigen::VectorXd up = residual(probe);
        probe[i] = p[i] - h;
        const Eigen::VectorXd down = residual(probe);
        probe[i] = p[i];
        jac.col(i) = (up - down) / (2.0 * h);
    }
    return jac;
}

/// Levenberg-Marquardt with Marquardt diagonal scaling and a multiplicative
/// damping schedule. residual(p) must return a vector of fixed length.
/// scale[i] is the characteristic magnitude of parameter i; it sets the
/// finite-difference step and the absolute floor of the convergence test.
template <typename Residual>
LeastSquaresResult levenberg_marquardt(Residual&& residual, Eigen::VectorXd p, const Eigen::VectorXd& scale,
                                       const LeastSquaresOptions& opts = {})
{
    LeastSquaresResult out;
    Eigen::VectorXd r = residual(p);
    double cost = r.squaredNorm();
    double lambda = opts.initial_damping;

    Eigen::MatrixXd jac = numeric_jacobian(residual, p, scale, opts.jacobian_step, r.size());
    int it = 0;
    for (; it < opts.max_iterations; ++it)
    {
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        const Eigen::VectorXd jtr = jac.transpose() * r;
        Eigen::VectorXd diag = jtj.diagonal();
        const double diag_floor = std::max(diag.maxCoeff(), 1e-300) * 1e-15;
        diag = diag.cwiseMax(diag_floor);

        bool improved = false;
        bool small_step = false;
        while (lambda < 1e20)
        {
            Eigen::MatrixXd damped = jtj;
            damped.diagonal() += lambda * diag;
            const Eigen::VectorXd delta = damped.ldlt().solve(-jtr);
            double rel = 0.0;
            for (Eigen::Index i = 0; i < p.size(); ++i)
                rel = std::max(rel, std::abs(delta[i]) / (std::abs(p[i]) + scale[i]));
            if (!delta.allFinite())
            {
                lambda *= opts.damping_factor;
                continue;
            }
            small_step = rel < opts.parameter_tolerance;

            const Eigen::VectorXd trial = p + delta;
            const Eigen::VectorXd r_trial = residual(trial);
            const double c_trial = r_trial.allFinite() ? r_trial.squaredNorm()
                                                       : std::numeric_limits<double>::infinity();
            if (c_trial < cost)
            {
                p = trial;
                r = r_trial;
                cost = c_trial;
                lambda = std::max(lambda / opts.damping_factor, 1e-15);
                improved = true;
                break;
            }
            if (small_step)
                break;
            lambda *= opts.damping_factor;
        }
        if (improved)
            jac = numeric_jacobian(residual, p, scale, opts.jacobian_step, r.size());
        if (small_step || !improved)
        {
            out.converged = small_step || cost == 0.0;
            ++it;
            break;
        }
    }

    out.params = p;
    out.residuals = r;
    out.jacobian = jac;
    out.cost = cost;
    out.iterations = it;
    return out;
}

/// Parameter covariance s^2 (J^T J)^-1 with s^2 = cost / (m - n). Returns
/// nullopt when J is rank deficient (reciprocal condition below 1e-12).
inline std::optional<Eigen::MatrixXd> covariance_from_jacobian(const Eigen::MatrixXd& jac, double cost)
{
    const Eigen::Index m = jac.rows();
    const Eigen::Index n = jac.cols();
    if (m <= n)
        return std::nullopt;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv[0] <= 0.0 || sv[sv.size() - 1] / sv[0] < 1e-12)
        return std::nullopt;
    const double s2 = cost / static_cast<double>(m - n);
    const Eigen::MatrixXd v = svd.matrixV();
    const Eigen::VectorXd inv_sq = sv.array().square().inverse();
    return Eigen::MatrixXd(v * inv_sq.asDiagonal() * v.transpose() * s2);
}

} // namespace mmesr

#endif
