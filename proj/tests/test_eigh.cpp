#include "mmesr/assignment.hpp"
#include "mmesr/eigh.hpp"

#include <doctest.h>

#include <complex>
#include <random>

using namespace mmesr;
using Complex = std::complex<double>;

namespace
{

DenseMatrix<Complex> random_hermitian(int n, std::mt19937_64& rng)
{
    std::normal_distribution<double> gauss;
    DenseMatrix<Complex> a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            a(i, j) = Complex(gauss(rng), gauss(rng));
    return (a + a.adjoint()) * 0.5;
}

} // namespace

TEST_CASE("eigh on a diagonal matrix sorts the diagonal")
{
    Eigen::Matrix3d d = Eigen::Vector3d(3, 1, 2).asDiagonal();
    const auto dec = eigh(d);
    CHECK(dec.values[0] == doctest::Approx(1.0));
    CHECK(dec.values[1] == doctest::Approx(2.0));
    CHECK(dec.values[2] == doctest::Approx(3.0));
}

TEST_CASE("eigh on a symmetric off-diagonal pair gives +-g")
{
    const double g = 1.12e6;
    Eigen::Matrix2d m;
    m << 0, g, g, 0;
    const auto dec = eigh(m);
    CHECK(dec.values[0] == doctest::Approx(-g));
    CHECK(dec.values[1] == doctest::Approx(g));
}

TEST_CASE("eigh rejects non-Hermitian input")
{
    Eigen::Matrix2d m;
    m << 0, 1, 2, 0;
    CHECK_THROWS_AS(eigh(m), std::invalid_argument);
}

TEST_CASE("eigh on the zero matrix")
{
    const auto dec = eigh(Eigen::Matrix4d::Zero().eval());
    CHECK(dec.values.cwiseAbs().maxCoeff() == 0.0);
    CHECK((dec.vectors - Eigen::Matrix4d::Identity()).norm() == 0.0);
}

TEST_CASE("eigh matches a reference solver on random Hermitian matrices")
{
    std::mt19937_64 rng(20240917);
    std::uniform_int_distribution<int> dims(1, 16);
    double worst_value = 0.0;
    double worst_residual = 0.0;
    double worst_unitarity = 0.0;
    for (int trial = 0; trial < 1000; ++trial)
    {
        const int n = dims(rng);
        const auto h = random_hermitian(n, rng);
        const auto dec = eigh(h);
        Eigen::SelfAdjointEigenSolver<DenseMatrix<Complex>> ref(h);
        const double norm = h.norm();
        worst_value = std::max(worst_value, (dec.values - ref.eigenvalues()).cwiseAbs().maxCoeff() / norm);
        for (int j = 0; j < n; ++j)
        {
            const double res = (h * dec.vectors.col(j) - dec.values[j] * dec.vectors.col(j)).norm();
            worst_residual = std::max(worst_residual, res / norm);
        }
        worst_unitarity = std::max(
            worst_unitarity, (dec.vectors.adjoint() * dec.vectors - DenseMatrix<Complex>::Identity(n, n)).norm());
    }
    CHECK(worst_value <= 1e-9);
    CHECK(worst_residual <= 1e-9);
    CHECK(worst_unitarity <= 1e-9);
}

TEST_CASE("eigh on a real symmetric 8x8 matches the reference")
{
    std::mt19937_64 rng(7);
    std::normal_distribution<double> gauss;
    Eigen::MatrixXd a(8, 8);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
            a(i, j) = gauss(rng);
    const Eigen::MatrixXd h = a + a.transpose();
    const auto dec = eigh(h);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(h);
    CHECK((dec.values - ref.eigenvalues()).cwiseAbs().maxCoeff() <= 1e-9 * h.norm());
}

TEST_CASE("min_cost_assignment finds the optimal permutation")
{
    Eigen::Matrix3d cost;
    cost << 4, 1, 3,
            2, 0, 5,
            3, 2, 2;
    const auto assign = min_cost_assignment(cost);
    // Enumerate all permutations as the oracle.
    std::vector<int> perm{0, 1, 2};
    double best = 1e300;
    do
    {
        best = std::min(best, cost(0, perm[0]) + cost(1, perm[1]) + cost(2, perm[2]));
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(cost(0, assign[0]) + cost(1, assign[1]) + cost(2, assign[2]) == doctest::Approx(best));
}
