#ifndef MMESR_LINESHAPE_HPP
#define MMESR_LINESHAPE_HPP

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mmesr
{

struct TraceMeta
{
    std::optional<double> field_tesla;
    std::string timestamp;
    std::string power;
};

/// A transmission trace: strictly increasing frequencies with |S21| as linear
/// magnitude. The dB values are kept alongside so a trace read from disk is
/// written back byte-for-byte. Traces built from linear samples may carry
/// non-positive values (additive noise); their dB entries are NaN and such a
/// trace cannot be written to CSV.
class Trace
{
public:
    Trace() = default;
    static Trace from_db(std::vector<double> freq_hz, std::vector<double> s21_db, TraceMeta meta = {});
    static Trace from_linear(std::vector<double> freq_hz, std::vector<double> s21, TraceMeta meta = {});

    const std::vector<double>& freq_hz() const { return freq_; }
    const std::vector<double>& s21() const { return linear_; }
    const std::vector<double>& s21_db() const { return db_; }
    std::size_t size() const { return freq_.size(); }
    double span_hz() const { return freq_.empty() ? 0.0 : freq_.back() - freq_.front(); }

    TraceMeta meta;

    /// Samples with lo <= f <= hi.
    Trace slice(double lo_hz, double hi_hz) const;

private:
    static void validate(const std::vector<double>& freq, std::size_t samples);

    std::vector<double> freq_;
    std::vector<double> linear_;
    std::vector<double> db_;
};

inline double db_to_linear(double db) { return std::pow(10.0, db / 20.0); }
double linear_to_db(double linear);

/// Fano / Breit-Wigner transmission with nuisance scale and baseline:
/// amp * [1 - (q G/2 + D)^2 / ((G/2)^2 + D^2)] + offset, D = f - f0.
struct FanoParams
{
    double f0_hz = 0.0;
    double gamma_hz = 1.0;   // full linewidth
    double fano_q = 0.0;
    double amp = 1.0;        // sign carries peak (+) or dip (-) polarity
    double offset = 0.0;

    double q_factor() const { return f0_hz / gamma_hz; }
};

double fano_model(const FanoParams& p, double f_hz);

struct QualityReport
{
    double q_factor = 0.0;
    double loss_tangent = 0.0;        // 1 / q_factor
    Eigen::Matrix<double, 5, 5> covariance = Eigen::Matrix<double, 5, 5>::Zero();  // f0, gamma, q, amp, offset
    double residual_rms = 0.0;
};

QualityReport make_quality_report(const FanoParams& p, const Eigen::Matrix<double, 5, 5>& covariance, double rms);

struct FanoFit
{
    FanoParams params;
    QualityReport report;
    bool converged = false;
    int iterations = 0;
};

struct FanoFitOptions
{
    int max_iterations = 200;
    double parameter_tolerance = 1e-10;
};

/// Least-squares fit of the Fano model. Frequencies are mapped to detuning in
/// units of the trace span around the guessed centre before fitting.
/// Throws UnfittableError for traces shorter than 8 samples, flat traces and
/// a rank-deficient final Jacobian. A run that exhausts the iteration budget
/// returns its best iterate with converged = false.
FanoFit fit_fano(const Trace& trace, const FanoParams& guess, const FanoFitOptions& opts = {});

/// Resonance seeds: contiguous excursions from the median baseline beyond
/// min_prominence (peaks and dips), one guess per excursion at its extremum,
/// linewidth from the half-height crossings. Guesses lying within 3 linewidths
/// of a stronger one are dropped; the rest are filtered to f0/gamma >= min_q
/// and sorted by frequency.
std::vector<FanoParams> find_peaks(const Trace& trace, double min_prominence, double min_q);

struct CensusEntry
{
    FanoFit fit;
    std::string status;   // "ok", "not-converged" or "unfittable"
};

struct CensusOptions
{
    double min_prominence = 0.0;
    double min_q = 0.0;
    double fit_half_width_linewidths = 15.0;  // fit window around each guess
    int threads = 1;
};

/// Batch zero-field analysis: detect every resonance and fit it on a local
/// window. Entries are sorted by guessed frequency.
std::vector<CensusEntry> census(const Trace& trace, const CensusOptions& opts);

/// Fits one guess on the window f0 +- half_width_linewidths * gamma.
FanoFit fit_local(const Trace& trace, const FanoParams& guess, double half_width_linewidths,
                  const FanoFitOptions& opts = {});

} // namespace mmesr

#endif
