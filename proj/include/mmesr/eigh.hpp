#ifndef MMESR_EIGH_HPP
#define MMESR_EIGH_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace mmesr
{

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct EigenDecomposition
{
    Eigen::VectorXd values;          // ascending
    DenseMatrix<Scalar> vectors;     // column j pairs with values[j]
    int sweeps = 0;
};

/// Relative Hermiticity defect ||A - A^H||_F / ||A||_F (0 for the zero matrix).
template <typename Derived>
double hermiticity_defect(const Eigen::MatrixBase<Derived>& a)
{
    const double norm = a.norm();
    if (norm == 0.0)
        return 0.0;
    return (a - a.adjoint()).norm() / norm;
}

/// Cyclic Jacobi diagonalization of a dense Hermitian (or real symmetric)
/// matrix. Sweeps until the off-diagonal Frobenius norm drops below
/// 1e-13 * ||A||_F. Rejects input whose Hermiticity defect exceeds 1e-9.
template <typename Derived>
EigenDecomposition<typename Derived::Scalar> eigh(const Eigen::MatrixBase<Derived>& input)
{
    using Scalar = typename Derived::Scalar;
    using std::abs;
    using std::sqrt;

    if (input.rows() != input.cols())
        throw std::invalid_argument("eigh: matrix must be square");
    if (hermiticity_defect(input) > 1e-9)
        throw std::invalid_argument("eigh: matrix is not Hermitian");

    const Eigen::Index n = input.rows();
    // Symmetrize so rounding in the input cannot bias the rotations.
    DenseMatrix<Scalar> a = (input + input.adjoint()) * Scalar(0.5);
    DenseMatrix<Scalar> v = DenseMatrix<Scalar>::Identity(n, n);

    const double total = a.norm();
    const double target = 1e-13 * total;
    auto off_norm = [&] {
        double s = 0.0;
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = 0; i < n; ++i)
                if (i != j)
                    s += Eigen::numext::abs2(a(i, j));
        return std::sqrt(s);
    };

    int sweep = 0;
    constexpr int kMaxSweeps = 100;
    while (total > 0.0 && off_norm() > target && sweep < kMaxSweeps)
    {
        ++sweep;
        for (Eigen::Index p = 0; p < n - 1; ++p)
        {
            for (Eigen::Index q = p + 1; q < n; ++q)
            {
                const double apq = abs(a(p, q));
                if (apq == 0.0)
                    continue;
                const Scalar phase = a(p, q) / apq;
                const double app = Eigen::numext::real(a(p, p));
                const double aqq = Eigen::numext::real(a(q, q));
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                // J = D R with D = diag(1, conj(phase)) restricted to (p, q);
                // then A <- J^H A J zeroes A(p, q).
                Eigen::Matrix<Scalar, 2, 2> rot;
                rot(0, 0) = Scalar(c);
                rot(0, 1) = Scalar(s);
                rot(1, 0) = -Scalar(s) * Eigen::numext::conj(phase);
                rot(1, 1) = Scalar(c) * Eigen::numext::conj(phase);

                for (Eigen::Index k = 0; k < n; ++k)
                {
                    const Scalar akp = a(k, p);
                    const Scalar akq = a(k, q);
                    a(k, p) = akp * rot(0, 0) + akq * rot(1, 0);
                    a(k, q) = akp * rot(0, 1) + akq * rot(1, 1);
                }
                for (Eigen::Index k = 0; k < n; ++k)
                {
                    const Scalar apk = a(p, k);
                    const Scalar aqk = a(q, k);
                    a(p, k) = Eigen::numext::conj(rot(0, 0)) * apk + Eigen::numext::conj(rot(1, 0)) * aqk;
                    a(q, k) = Eigen::numext::conj(rot(0, 1)) * apk + Eigen::numext::conj(rot(1, 1)) * aqk;
                }
                a(p, q) = Scalar(0);
                a(q, p) = Scalar(0);
                for (Eigen::Index k = 0; k < n; ++k)
                {
                    const Scalar vkp = v(k, p);
                    const Scalar vkq = v(k, q);
                    v(k, p) = vkp * rot(0, 0) + vkq * rot(1, 0);
                    v(k, q) = vkp * rot(0, 1) + vkq * rot(1, 1);
                }
            }
        }
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
        return Eigen::numext::real(a(i, i)) < Eigen::numext::real(a(j, j));
    });

    EigenDecomposition<Scalar> out;
    out.values.resize(n);
    out.vectors.resize(n, n);
    out.sweeps = sweep;
    for (Eigen::Index j = 0; j < n; ++j)
    {
        const auto src = order[static_cast<std::size_t>(j)];
        out.values[j] = Eigen::numext::real(a(src, src));
        out.vectors.col(j) = v.col(src);
    }
    return out;
}

} // namespace mmesr

#endif
