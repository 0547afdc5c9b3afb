#ifndef MMESR_COUPLING_HPP
#define MMESR_COUPLING_HPP

#include "mmesr/units.hpp"

#include <Eigen/Core>

#include <array>
#include <vector>

namespace mmesr
{

/// Photon mode fp coupled at rate g to a spin line linearized as
/// ws(B) = spin_intercept + spin_slope * B. All frequencies in Hz.
struct CrossingModel
{
    double fp_hz = 0.0;
    double spin_intercept_hz = 0.0;
    double spin_slope_hz_per_tesla = 0.0;
    double g_hz = 0.0;

    double delta_ps() const { return 2.0 * g_hz / fp_hz; }
    double spin_hz(double b_tesla) const { return spin_intercept_hz + spin_slope_hz_per_tesla * b_tesla; }
    /// Field where the bare spin line meets fp.
    double crossing_field() const { return (fp_hz - spin_intercept_hz) / spin_slope_hz_per_tesla; }
};

struct NormalModes
{
    double plus_hz = 0.0;
    double minus_hz = 0.0;
};

/// w+-^2 = (ws^2 + wp^2 +- sqrt((ws^2 - wp^2)^2 + 4 Dps^2 ws^2 wp^2)) / 2,
/// evaluated as offsets from wp^2 so narrow splittings at GHz carriers keep
/// full precision.
NormalModes normal_modes(double spin_hz, double photon_hz, double g_hz);
NormalModes normal_modes(const CrossingModel& model, double b_tesla);

/// The branch that continues the bare photon mode: w+ while the spin line is
/// below fp, w- above it (w+ exactly on resonance).
double photon_like_branch(const CrossingModel& model, double b_tesla);

struct CrossingPoint
{
    double b_tesla = 0.0;
    double f_hz = 0.0;
};

struct CrossingFitOptions
{
    std::array<bool, 4> fixed{};   // fp, intercept, slope, g
    double sigma_hz = 0.0;         // per-point noise for branch hysteresis; <= 0: residual rms
    int max_reassignments = 20;
    double max_detuning_g = 100.0;
    int max_iterations = 200;
    double parameter_tolerance = 1e-10;
};

struct CrossingFit
{
    CrossingModel model;
    Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();   // fp, intercept, slope, g
    std::array<double, 4> sigma{};
    std::vector<int> branch;       // +1 for w+, -1 for w-, per input point
    double residual_rms = 0.0;
    bool converged = false;
    int iterations = 0;

    double sigma_delta_ps() const;
    double sigma_crossing_field() const;
};

/// Least-squares fit of (fp, intercept, slope, g). Each point is assigned to
/// the nearer branch; after every fit a point only changes branch when the
/// other one is closer by more than 3 sigma. Throws UnfittableError for fewer
/// than 8 points, when every point sits beyond max_detuning_g * g from the
/// spin line, when all points land on one branch, or when the Jacobian is
/// rank deficient.
CrossingFit fit_crossing(const std::vector<CrossingPoint>& points, const CrossingModel& guess,
                         const CrossingFitOptions& opts = {});

struct ConcentrationInput
{
    double g_hz = 0.0;
    double fp_hz = 0.0;
    double lande_g = 0.0;
    double filling_factor = 1.0;
    double sigma_g_hz = 0.0;
    double sigma_fp_hz = 0.0;
    double sigma_lande_g = 0.0;
    double sigma_filling_factor = 0.0;
};

struct Concentration
{
    double per_cm3 = 0.0;
    double sigma_per_cm3 = 0.0;
};

/// n = 4 hbar g^2 / (g_L^2 muB^2 mu0 fp xi) with g and fp in Hz, converted
/// to cm^-3; first-order error propagation. Throws std::invalid_argument for
/// non-positive inputs or xi > 1.
Concentration concentration(const ConcentrationInput& in, const PhysicalConstants& c = kCodata);

/// Inverse of concentration(): the coupling rate (Hz) implied by n.
double coupling_from_concentration(double per_cm3, double fp_hz, double lande_g, double filling_factor,
                                   const PhysicalConstants& c = kCodata);

} // namespace mmesr

#endif
