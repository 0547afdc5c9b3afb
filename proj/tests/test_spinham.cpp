#include "mmesr/spinham.hpp"

#include <doctest.h>

#include <complex>
#include <random>
#include <set>

using namespace mmesr;
using Complex = std::complex<double>;

namespace
{

constexpr double kMuBh = 13.996244936e9;

HalfInteger half(int twice) { return HalfInteger::from_twice(twice); }

// Independent oracle: Eigen's solver plus dominant-weight labelling.
double oracle_level(const SpinSystem& sys, double field, HalfInteger label)
{
    const Eigen::MatrixXd h = build_hamiltonian<double>(sys, field);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(h);
    const int idx = index_of_projection(sys.spin(), label);
    Eigen::Index best = 0;
    solver.eigenvectors().row(idx).cwiseAbs().maxCoeff(&best);
    return solver.eigenvalues()[best];
}

SpinSystem random_system(std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> twice(0, 7);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> gdist(0.5, 5.0);
    std::map<StevensIndex, double> coeffs{{{2, 0}, unit(rng) * kGHz},
                                          {{4, 0}, unit(rng) * 1e-2 * kGHz},
                                          {{4, 4}, unit(rng) * 1e-2 * kGHz},
                                          {{6, 0}, unit(rng) * 1e-5 * kGHz},
                                          {{6, 4}, unit(rng) * 1e-5 * kGHz}};
    return SpinSystem(half(2 * twice(rng) + 1), gdist(rng), coeffs);
}

const TransitionLine& find_line(const std::vector<TransitionLine>& lines, int lower2, int upper2)
{
    for (const auto& l : lines)
        if (l.lower_label == half(lower2) && l.upper_label == half(upper2))
            return l;
    FAIL("transition not found");
    return lines.front();
}

} // namespace

TEST_CASE("spin matrices for S=1/2")
{
    const auto ops = spin_matrices(0.5);
    CHECK(ops.sz(0, 0) == 0.5);
    CHECK(ops.sz(1, 1) == -0.5);
    CHECK(ops.s_plus(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("spin matrices for S=7/2")
{
    const auto ops = spin_matrices(3.5);
    CHECK(ops.sz(0, 0) == 3.5);
    // <7/2|S+|5/2> = sqrt(S(S+1) - m(m+1)) at m = 5/2
    CHECK(ops.s_plus(0, 1) == doctest::Approx(std::sqrt(3.5 * 4.5 - 2.5 * 3.5)));
    CHECK(ops.s_plus(0, 1) == doctest::Approx(2.6457513));
}

TEST_CASE("spin matrices satisfy the ladder algebra")
{
    for (int twice = 1; twice <= 15; ++twice)
    {
        const auto ops = spin_matrices<Complex>(half(twice));
        CHECK((ops.s_plus - ops.s_minus.adjoint()).norm() == 0.0);
        const DenseMatrix<Complex> comm = ops.sz * ops.s_plus - ops.s_plus * ops.sz;
        CHECK((comm - ops.s_plus).cwiseAbs().maxCoeff() <= 1e-12);
        for (int i = 0; i < twice + 1; ++i)
            CHECK(ops.sz(i, i).real() == doctest::Approx(0.5 * twice - i));
    }
}

TEST_CASE("non-half-integer spin is rejected")
{
    CHECK_THROWS_AS(spin_matrices(1.3), std::invalid_argument);
    CHECK_THROWS_AS(spin_matrices(0.0), std::invalid_argument);
    CHECK_THROWS_AS(HalfInteger::parse("7/3"), std::invalid_argument);
    CHECK(HalfInteger::parse("7/2").twice() == 7);
    CHECK(HalfInteger::parse("3").twice() == 6);
}

TEST_CASE("Stevens O20 for S=7/2 is 3m^2 - S(S+1)")
{
    const auto o20 = stevens_operator(half(7), {2, 0});
    const double expected[] = {21, 3, -9, -15, -15, -9, 3, 21};
    for (int i = 0; i < 8; ++i)
        CHECK(o20(i, i) == doctest::Approx(expected[i]));
    CHECK((o20 - Eigen::MatrixXd(o20.diagonal().asDiagonal())).norm() == 0.0);
}

TEST_CASE("Stevens O44 element is half the product of four ladder elements")
{
    const double s = 3.5;
    auto ladder = [s](double m) { return std::sqrt(s * (s + 1) - m * (m + 1)); };
    const double product = ladder(-0.5) * ladder(0.5) * ladder(1.5) * ladder(2.5);
    const auto o44 = stevens_operator(half(7), {4, 4});
    const int row = index_of_projection(half(7), half(7));
    const int col = index_of_projection(half(7), half(-1));
    CHECK(o44(row, col) == doctest::Approx(product / 2.0).epsilon(1e-12));
    CHECK(o44(row, col) == doctest::Approx(std::sqrt(20160.0) / 2.0).epsilon(1e-12));
    CHECK(o44(row, col) == doctest::Approx(70.993).epsilon(1e-4));
}

TEST_CASE("supported Stevens operators are Hermitian and traceless")
{
    for (int twice = 1; twice <= 15; ++twice)
    {
        for (const auto& idx : kSupportedStevens)
        {
            const auto op = stevens_operator<Complex>(half(twice), idx);
            const double scale = std::max(op.norm(), 1.0);
            CHECK((op - op.adjoint()).norm() <= 1e-12 * scale);
            CHECK(std::abs(op.trace()) <= 1e-9 * scale);
        }
    }
}

TEST_CASE("unsupported Stevens index lists the supported pairs")
{
    try
    {
        (void)stevens_operator(half(7), {2, 2});
        FAIL("expected throw");
    }
    catch (const std::invalid_argument& e)
    {
        CHECK(std::string(e.what()).find("(6,4)") != std::string::npos);
    }
    CHECK_THROWS_AS(SpinSystem(half(7), 2.0, {{{3, 1}, 1.0}}), std::invalid_argument);
}

TEST_CASE("Hamiltonian with only B20 gives -19.3515 GHz for |+-7/2>")
{
    const auto sys = SpinSystem(half(7), 1.99, {{{2, 0}, -0.9215 * kGHz}});
    const auto h = build_hamiltonian(sys, 0.0);
    CHECK(h(0, 0) == doctest::Approx(-19.3515e9).epsilon(1e-12));
    CHECK(h(7, 7) == doctest::Approx(-19.3515e9).epsilon(1e-12));
}

TEST_CASE("zero field Hamiltonian is the crystal-field matrix")
{
    const auto sys = gd_cawo4();
    Eigen::MatrixXd cf = Eigen::MatrixXd::Zero(8, 8);
    for (const auto& [idx, c] : sys.stevens_hz())
        cf += c * stevens_operator(sys.spin(), idx);
    CHECK((build_hamiltonian(sys, 0.0) - cf).norm() == 0.0);
}

TEST_CASE("free spin-1/2 in 1 T with g=2")
{
    const auto sys = SpinSystem(half(1), 2.0, {});
    const auto dec = eigh(build_hamiltonian(sys, 1.0));
    CHECK(dec.values[0] == doctest::Approx(-13.996e9).epsilon(1e-4));
    CHECK(dec.values[1] == doctest::Approx(13.996e9).epsilon(1e-4));
}

TEST_CASE("level diagram at zero field has four Kramers pairs")
{
    const auto d = level_diagram(gd_cawo4(), {0.0});
    REQUIRE(d.levels() == 8);
    const double span = d.energies.maxCoeff() - d.energies.minCoeff();
    for (int i = 0; i < 8; i += 2)
        CHECK(std::abs(d.energies(0, i + 1) - d.energies(0, i)) <= 1.0 * span / kGHz);
    std::set<int> magnitudes;
    for (const auto& l : d.labels)
        magnitudes.insert(std::abs(l.twice()));
    CHECK(magnitudes.size() == 4);
    // each pair carries +m and -m
    for (int i = 0; i < 8; i += 2)
        CHECK(d.labels[i].twice() == -d.labels[i + 1].twice());
}

TEST_CASE("level diagram rejects bad grids")
{
    CHECK_THROWS_AS(level_diagram(gd_cawo4(), {}), std::invalid_argument);
    CHECK_THROWS_AS(level_diagram(gd_cawo4(), {0.1, 0.1}), std::invalid_argument);
    CHECK_THROWS_AS(level_diagram(gd_cawo4(), {0.2, 0.1}), std::invalid_argument);
}

TEST_CASE("level diagram rows are traceless and tracking is smooth on a fine grid")
{
    std::vector<double> grid;
    for (int i = 0; i <= 500; ++i)
        grid.push_back(i * 1e-3);
    LevelDiagramOptions opts;
    opts.threads = 4;
    const auto d = level_diagram(gd_cawo4(), grid, opts);
    for (Eigen::Index r = 0; r < d.energies.rows(); ++r)
        CHECK(std::abs(d.energies.row(r).sum()) <= 1e-6 * d.energies.row(r).cwiseAbs().maxCoeff());
    CHECK(d.warnings.empty());
    // labels are a permutation of all projections
    std::set<int> seen;
    for (const auto& l : d.labels)
        seen.insert(l.twice());
    CHECK(seen.size() == 8);
}

TEST_CASE("highest level slope approaches 3.5 g_L muB/h in the Zeeman limit")
{
    const auto sys = gd_cawo4();
    const double h = 1e-4;
    const auto d = level_diagram(sys, {2.0 - h, 2.0 + h});
    Eigen::Index top = 0;
    d.energies.row(0).maxCoeff(&top);
    CHECK(d.labels[static_cast<std::size_t>(top)] == half(7));
    const double slope = (d.energies(1, top) - d.energies(0, top)) / (2 * h);
    CHECK(slope == doctest::Approx(3.5 * 1.99 * kMuBh).epsilon(1e-3));
}

TEST_CASE("slope of the +7/2-dominant level at 0.5 T")
{
    const auto sys = gd_cawo4();
    const double h = 1e-5;
    const double slope = (oracle_level(sys, 0.5 + h, half(7)) - oracle_level(sys, 0.5 - h, half(7))) / (2 * h);
    CHECK(slope == doctest::Approx(3.5 * sys.lande_g() * kMuBh).epsilon(5e-3));
}

TEST_CASE("Gd zero-field level spacings reproduce the tabulated ZFS")
{
    const auto levels = zero_field_levels(gd_cawo4());
    auto energy = [&](int twice) {
        for (const auto& l : levels)
            if (l.label.twice() == twice)
                return l.energy_hz;
        FAIL("missing level");
        return 0.0;
    };
    CHECK(energy(-3) - energy(-5) == doctest::Approx(10.49e9).epsilon(0.01));
    CHECK(energy(5) - energy(7) == doctest::Approx(17.90e9).epsilon(0.01));
    CHECK(energy(1) - energy(5) == doctest::Approx(15.14e9).epsilon(0.01));
    CHECK(energy(-3) - energy(7) == doctest::Approx(28.33e9).epsilon(0.01));
}

TEST_CASE("transitions of the Gd diagram")
{
    const auto sys = gd_cawo4();
    std::vector<double> grid;
    for (int i = 0; i <= 200; ++i)
        grid.push_back(i * 1e-3);
    const auto d = level_diagram(sys, grid);
    const auto lines = transitions(d, 7);
    for (const auto& l : lines)
    {
        CHECK(l.freq_hz.minCoeff() >= 0.0);
        CHECK(l.delta_sz >= 1);
        CHECK(l.delta_sz <= 7);
        CHECK(l.zfs_hz >= 0.0);
    }
    CHECK(lines.size() == 28);

    const auto& xi = find_line(lines, -5, 5);
    CHECK(xi.delta_sz == 5);
    CHECK(std::abs(xi.freq_hz[0]) <= 1e3);
    CHECK(xi.zfs_hz <= 1e3);

    // Zeeman limit of the Delta Sz = 5 splitting at small field.
    CHECK(xi.freq_hz[10] == doctest::Approx(5 * 1.99 * kMuBh * 0.01).epsilon(0.01));
    // At 0.1 T the crystal field bends the pair away from the linear limit;
    // compare with the oracle diagonalization instead.
    const double oracle = oracle_level(sys, 0.1, half(5)) - oracle_level(sys, 0.1, half(-5));
    CHECK(xi.freq_hz[100] == doctest::Approx(oracle).epsilon(1e-9));

    const auto& ii = find_line(lines, -5, -3);
    CHECK(ii.freq_hz[169] == doctest::Approx(14.934048e9).epsilon(0.015));
    CHECK(ii.zfs_hz == doctest::Approx(10.49e9).epsilon(0.01));
}

TEST_CASE("transition frequency is antisymmetric")
{
    const auto d = level_diagram(gd_cawo4(), {0.0, 0.05, 0.1});
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
            for (int r = 0; r < 3; ++r)
                CHECK(transition_frequency(d, i, j, r) == -transition_frequency(d, j, i, r));
}

TEST_CASE("zfs of the Gd system")
{
    const auto entries = zfs(gd_cawo4());
    for (double expected : {10.49e9, 17.90e9, 15.14e9, 28.33e9})
    {
        bool found = false;
        for (const auto& e : entries)
            found = found || std::abs(e.hz - expected) <= 0.01 * expected;
        CHECK_MESSAGE(found, "missing ZFS ", expected);
    }
    for (const auto& e : entries)
    {
        CHECK(e.hz >= 0.0);
        if (e.first == e.second)
            CHECK(e.hz == 0.0);
    }
}

TEST_CASE("zfs with only B20 is 12|B20| between 5/2 and 3/2")
{
    const auto entries = zfs(SpinSystem(half(7), 1.99, {{{2, 0}, -0.9215 * kGHz}}));
    bool found = false;
    for (const auto& e : entries)
        if ((e.first == half(5) && e.second == half(3)) || (e.first == half(3) && e.second == half(5)))
        {
            CHECK(e.hz == doctest::Approx(12 * 0.9215e9).epsilon(1e-12));
            CHECK(e.hz == doctest::Approx(11.058e9).epsilon(1e-4));
            found = true;
        }
    CHECK(found);
}

TEST_CASE("zfs of a free spin vanishes")
{
    for (const auto& e : zfs(SpinSystem(half(7), 1.99, {})))
        CHECK(e.hz == 0.0);
}

TEST_CASE("random systems: Hermitian, traceless, Kramers, field-reversal symmetric")
{
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> fields(-2.0, 2.0);
    for (int trial = 0; trial < 1000; ++trial)
    {
        const auto sys = random_system(rng);
        const double b = fields(rng);
        const auto h = build_hamiltonian<Complex>(sys, b);
        const double norm = h.norm();
        REQUIRE((h - h.adjoint()).norm() <= 1e-9 * norm);
        REQUIRE(std::abs(h.trace()) <= 1e-9 * norm);

        const auto zero = eigh(build_hamiltonian(sys, 0.0)).values;
        const double scale = zero.cwiseAbs().maxCoeff();
        for (Eigen::Index i = 0; i + 1 < zero.size(); i += 2)
            REQUIRE(std::abs(zero[i + 1] - zero[i]) <= 1e-9 * scale);

        const auto plus = eigh(build_hamiltonian(sys, b)).values;
        const auto minus = eigh(build_hamiltonian(sys, -b)).values;
        REQUIRE((plus - minus).cwiseAbs().maxCoeff() <= 1e-9 * plus.cwiseAbs().maxCoeff());
    }
}
