#ifndef MMESR_SPINHAM_HPP
#define MMESR_SPINHAM_HPP

#include "mmesr/eigh.hpp"
#include "mmesr/units.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <compare>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmesr
{

// Stevens operator O_k^q: k is the polynomial order, q the rank.
struct StevensIndex
{
    int k = 0;
    int q = 0;
    friend constexpr auto operator<=>(StevensIndex, StevensIndex) = default;

    std::string name() const { return "B" + std::to_string(k) + std::to_string(q); }
};

// The S4 site terms supported by the crystal-field Hamiltonian.
inline constexpr StevensIndex kSupportedStevens[] = {{2, 0}, {4, 0}, {4, 4}, {6, 0}, {6, 4}};

bool is_supported_stevens(StevensIndex idx);
std::string supported_stevens_list();

class SpinSystem
{
public:
    /// Coefficients are in Hz. Throws std::invalid_argument for S < 1/2,
    /// g_L <= 0 or any (k, q) outside kSupportedStevens.
    SpinSystem(HalfInteger spin, double lande_g, std::map<StevensIndex, double> stevens_hz, std::string label = {});

    HalfInteger spin() const { return spin_; }
    int dimension() const { return spin_.twice() + 1; }
    double lande_g() const { return lande_g_; }
    const std::map<StevensIndex, double>& stevens_hz() const { return stevens_hz_; }
    double coefficient_hz(StevensIndex idx) const;
    const std::string& label() const { return label_; }

    SpinSystem with_lande_g(double g) const { return {spin_, g, stevens_hz_, label_}; }
    SpinSystem with_coefficient(StevensIndex idx, double hz) const;

private:
    HalfInteger spin_;
    double lande_g_;
    std::map<StevensIndex, double> stevens_hz_;
    std::string label_;
};

/// Gd3+ at the Ca site of CaWO4 (S = 7/2, g_L = 1.99).
SpinSystem gd_cawo4();

template <typename Scalar>
struct SpinMatrices
{
    DenseMatrix<Scalar> sz;
    DenseMatrix<Scalar> s_plus;
    DenseMatrix<Scalar> s_minus;
};

/// Basis index i carries projection m = S - i.
inline HalfInteger projection_of_index(HalfInteger spin, int i) { return HalfInteger::from_twice(spin.twice() - 2 * i); }
inline int index_of_projection(HalfInteger spin, HalfInteger m) { return (spin.twice() - m.twice()) / 2; }

template <typename Scalar = double>
SpinMatrices<Scalar> spin_matrices(HalfInteger spin)
{
    if (spin.twice() < 1)
        throw std::invalid_argument("spin_matrices: 2S+1 must be at least 2");
    const int dim = spin.twice() + 1;
    const double s = spin.value();
    SpinMatrices<Scalar> out;
    out.sz = DenseMatrix<Scalar>::Zero(dim, dim);
    out.s_plus = DenseMatrix<Scalar>::Zero(dim, dim);
    for (int i = 0; i < dim; ++i)
    {
        const double m = projection_of_index(spin, i).value();
        out.sz(i, i) = Scalar(m);
        if (i > 0)  // <m+1|S+|m>, row i-1 holds m+1
            out.s_plus(i - 1, i) = Scalar(std::sqrt(s * (s + 1.0) - m * (m + 1.0)));
    }
    out.s_minus = out.s_plus.adjoint();
    return out;
}

template <typename Scalar = double>
SpinMatrices<Scalar> spin_matrices(double spin)
{
    return spin_matrices<Scalar>(HalfInteger::from_double(spin));
}

/// Stevens operator in the Abragam-Bleaney normalization, X = S(S+1).
template <typename Scalar = double>
DenseMatrix<Scalar> stevens_operator(HalfInteger spin, StevensIndex idx)
{
    if (!is_supported_stevens(idx))
        throw std::invalid_argument("stevens_operator: unsupported (k,q)=(" + std::to_string(idx.k) + "," +
                                    std::to_string(idx.q) + "); supported: " + supported_stevens_list());
    const auto ops = spin_matrices<Scalar>(spin);
    const int dim = spin.twice() + 1;
    const double s = spin.value();
    const double x = s * (s + 1.0);
    const auto id = DenseMatrix<Scalar>::Identity(dim, dim);
    const DenseMatrix<Scalar> sz2 = ops.sz * ops.sz;
    const DenseMatrix<Scalar> sz4 = sz2 * sz2;

    if (idx == StevensIndex{2, 0})
        return Scalar(3) * sz2 - Scalar(x) * id;
    if (idx == StevensIndex{4, 0})
        return Scalar(35) * sz4 - Scalar(30 * x - 25) * sz2 + Scalar(3 * x * x - 6 * x) * id;
    if (idx == StevensIndex{6, 0})
        return Scalar(231) * sz4 * sz2 - Scalar(315 * x - 735) * sz4 + Scalar(105 * x * x - 525 * x + 294) * sz2 +
               Scalar(-5 * x * x * x + 40 * x * x - 60 * x) * id;

    const DenseMatrix<Scalar> sp2 = ops.s_plus * ops.s_plus;
    const DenseMatrix<Scalar> sm2 = ops.s_minus * ops.s_minus;
    const DenseMatrix<Scalar> ladder4 = sp2 * sp2 + sm2 * sm2;
    if (idx == StevensIndex{4, 4})
        return Scalar(0.5) * ladder4;
    // (6, 4)
    const DenseMatrix<Scalar> poly = Scalar(11) * sz2 - Scalar(x + 38) * id;
    return Scalar(0.25) * (ladder4 * poly + poly * ladder4);
}

/// H = g_L (muB/h) B Sz + sum_kq B_kq O_kq, in Hz.
template <typename Scalar = double>
DenseMatrix<Scalar> build_hamiltonian(const SpinSystem& system, double field_tesla,
                                      const PhysicalConstants& constants = kCodata)
{
    if (!std::isfinite(field_tesla))
        throw std::invalid_argument("build_hamiltonian: field must be finite");
    const auto ops = spin_matrices<Scalar>(system.spin());
    DenseMatrix<Scalar> h = Scalar(system.lande_g() * constants.bohr_magneton_over_h * field_tesla) * ops.sz;
    for (const auto& [idx, coeff] : system.stevens_hz())
        if (coeff != 0.0)
            h += Scalar(coeff) * stevens_operator<Scalar>(system.spin(), idx);
    return h;
}

// Consecutive grid points whose best eigenvector overlap fell below 0.7.
struct TrackingWarning
{
    double field_lo = 0.0;
    double field_hi = 0.0;
    double min_overlap = 0.0;
};

struct LevelDiagram
{
    Eigen::VectorXd field_grid;            // tesla, strictly increasing
    Eigen::MatrixXd energies;              // Hz; row = field point, column = tracked level
    std::vector<HalfInteger> labels;       // dominant Sz of each column at the first grid point
    std::vector<std::vector<HalfInteger>> character;  // [row][column] dominant Sz at that field
    SpinSystem system;
    std::vector<TrackingWarning> warnings;

    int levels() const { return static_cast<int>(labels.size()); }
    /// Column carrying the given label; throws std::out_of_range if absent.
    int column_of(HalfInteger label) const;
};

struct LevelDiagramOptions
{
    int threads = 1;
    double min_overlap = 0.7;
    PhysicalConstants constants = kCodata;
};

/// Diagonalizes H(B) on the grid and orders columns by maximal-overlap
/// assignment between consecutive fields. Degenerate eigenspaces (e.g.
/// Kramers pairs at B = 0) are resolved by diagonalizing Sz inside them.
LevelDiagram level_diagram(const SpinSystem& system, const std::vector<double>& field_grid,
                           const LevelDiagramOptions& opts = {});

struct LabeledLevel
{
    HalfInteger label;
    double energy_hz = 0.0;
};

/// Zero-field levels labeled by dominant Sz, sorted by energy.
std::vector<LabeledLevel> zero_field_levels(const SpinSystem& system);

// A transition between the levels whose dominant Sz character is
// lower_label / upper_label at each field. Across a broad anticrossing the
// character moves between adiabatic columns, so a line can jump columns.
struct TransitionLine
{
    HalfInteger lower_label;
    HalfInteger upper_label;
    int delta_sz = 0;
    Eigen::VectorXd field_tesla;
    Eigen::VectorXd freq_hz;   // |E_upper - E_lower| per field point
    double zfs_hz = 0.0;       // the same level pair at B = 0

    std::string name() const;  // "|-5/2>->|-3/2>"
};

/// Signed E(to) - E(from) at a grid row; antisymmetric in (from, to).
double transition_frequency(const LevelDiagram& diagram, int from_column, int to_column, int row);

/// One line per pair of Sz characters with 1 <= delta_sz <= max_delta_sz.
/// The lower label is the level lower in energy over the grid on average;
/// exact ties put the more negative projection first.
std::vector<TransitionLine> transitions(const LevelDiagram& diagram, int max_delta_sz);

struct LocalSpinLine
{
    std::string name;
    int delta_sz = 0;
    double freq_hz = 0.0;                  // at the requested field
    double slope_hz_per_tesla = 0.0;
    double intercept_hz = 0.0;             // freq = intercept + slope * B near that field
};

/// Transition (1 <= delta_sz <= max_delta_sz) closest in frequency to freq_hz
/// at field b_tesla, linearized there by a central difference of +-db_tesla.
LocalSpinLine nearest_transition(const SpinSystem& system, double b_tesla, double freq_hz, int max_delta_sz,
                                 double db_tesla = 1e-4);

struct ZfsEntry
{
    HalfInteger first;   // |m| of the lower-energy doublet
    HalfInteger second;  // |m| of the other doublet (equal to first for the internal splitting)
    double hz = 0.0;
    std::string label;   // "+-5/2<->+-3/2"
};

/// Zero-field gaps between distinct |m| doublets, followed by the internal
/// splitting of each doublet (0 for Kramers pairs).
std::vector<ZfsEntry> zfs(const SpinSystem& system);

} // namespace mmesr

#endif
