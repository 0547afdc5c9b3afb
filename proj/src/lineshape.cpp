#include "mmesr/lineshape.hpp"

#include "mmesr/errors.hpp"
#include "mmesr/least_squares.hpp"
#include "mmesr/parallel.hpp"
#include "mmesr/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mmesr
{

double linear_to_db(double linear)
{
    if (!(linear > 0.0))
        throw std::invalid_argument("linear_to_db: magnitude must be positive");
    return 20.0 * std::log10(linear);
}

void Trace::validate(const std::vector<double>& freq, std::size_t samples)
{
    if (freq.size() != samples)
        throw DataError("trace: frequency and S21 columns differ in length");
    for (std::size_t i = 0; i < freq.size(); ++i)
    {
        if (!std::isfinite(freq[i]))
            throw DataError("trace: non-finite frequency at sample " + std::to_string(i));
        if (i > 0 && !(freq[i] > freq[i - 1]))
            throw DataError("trace: frequencies must be strictly increasing (sample " + std::to_string(i) + ")");
    }
}

Trace Trace::from_db(std::vector<double> freq_hz, std::vector<double> s21_db, TraceMeta meta)
{
    validate(freq_hz, s21_db.size());
    Trace t;
    t.freq_ = std::move(freq_hz);
    t.db_ = std::move(s21_db);
    t.linear_.resize(t.db_.size());
    for (std::size_t i = 0; i < t.db_.size(); ++i)
    {
        if (!std::isfinite(t.db_[i]))
            throw DataError("trace: non-finite S21 at sample " + std::to_string(i));
        t.linear_[i] = db_to_linear(t.db_[i]);
    }
    t.meta = std::move(meta);
    return t;
}

Trace Trace::from_linear(std::vector<double> freq_hz, std::vector<double> s21, TraceMeta meta)
{
    validate(freq_hz, s21.size());
    Trace t;
    t.freq_ = std::move(freq_hz);
    t.linear_ = std::move(s21);
    t.db_.resize(t.linear_.size());
    for (std::size_t i = 0; i < t.linear_.size(); ++i)
    {
        if (!std::isfinite(t.linear_[i]))
            throw DataError("trace: non-finite S21 at sample " + std::to_string(i));
        // Noisy in-memory traces may dip below zero; those samples have no dB form.
        t.db_[i] = t.linear_[i] > 0.0 ? linear_to_db(t.linear_[i]) : std::numeric_limits<double>::quiet_NaN();
    }
    t.meta = std::move(meta);
    return t;
}

Trace Trace::slice(double lo_hz, double hi_hz) const
{
    const auto first = std::lower_bound(freq_.begin(), freq_.end(), lo_hz);
    const auto last = std::upper_bound(freq_.begin(), freq_.end(), hi_hz);
    const auto a = static_cast<std::size_t>(first - freq_.begin());
    const auto b = static_cast<std::size_t>(std::max(first, last) - freq_.begin());
    Trace t;
    t.freq_.assign(freq_.begin() + static_cast<std::ptrdiff_t>(a), freq_.begin() + static_cast<std::ptrdiff_t>(b));
    t.linear_.assign(linear_.begin() + static_cast<std::ptrdiff_t>(a), linear_.begin() + static_cast<std::ptrdiff_t>(b));
    t.db_.assign(db_.begin() + static_cast<std::ptrdiff_t>(a), db_.begin() + static_cast<std::ptrdiff_t>(b));
    t.meta = meta;
    return t;
}

double fano_model(const FanoParams& p, double f_hz)
{
    const double half = 0.5 * p.gamma_hz;
    const double detuning = f_hz - p.f0_hz;
    const double num = p.fano_q * half + detuning;
    return p.amp * (1.0 - num * num / (half * half + detuning * detuning)) + p.offset;
}

QualityReport make_quality_report(const FanoParams& p, const Eigen::Matrix<double, 5, 5>& covariance, double rms)
{
    QualityReport r;
    r.q_factor = p.q_factor();
    r.loss_tangent = 1.0 / r.q_factor;
    r.covariance = covariance;
    r.residual_rms = rms;
    return r;
}

FanoFit fit_fano(const Trace& trace, const FanoParams& guess, const FanoFitOptions& opts)
{
    const auto& freq = trace.freq_hz();
    const auto& y = trace.s21();
    const std::size_t n = trace.size();
    if (n < 8)
        throw UnfittableError("fit_fano: need at least 8 samples, got " + std::to_string(n));
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    const double range = *hi - *lo;
    if (!(range > 1e-12 * std::max(std::abs(*hi), 1e-300)))
        throw UnfittableError("fit_fano: trace is flat, no resonance present");
    if (!(guess.gamma_hz > 0.0) || !std::isfinite(guess.f0_hz) || !std::isfinite(guess.amp) ||
        !std::isfinite(guess.offset) || !std::isfinite(guess.fano_q))
        throw std::invalid_argument("fit_fano: guess must be finite with positive linewidth");

    const double centre = guess.f0_hz;
    const double span = trace.span_hz();
    Eigen::VectorXd x(static_cast<Eigen::Index>(n));
    Eigen::VectorXd target(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
    {
        x[static_cast<Eigen::Index>(i)] = (freq[i] - centre) / span;
        target[static_cast<Eigen::Index>(i)] = y[i];
    }

    auto residual = [&](const Eigen::VectorXd& p) {
        const double half = 0.5 * p[1];
        const Eigen::ArrayXd d = x.array() - p[0];
        const Eigen::ArrayXd num = p[2] * half + d;
        return Eigen::VectorXd(p[3] * (1.0 - num.square() / (half * half + d.square())) + p[4] - target.array());
    };

    Eigen::VectorXd p0(5);
    p0 << 0.0, guess.gamma_hz / span, guess.fano_q, guess.amp, guess.offset;
    Eigen::VectorXd scale(5);
    scale << p0[1], p0[1], 1.0, std::max(std::abs(guess.amp), range), range;

    LeastSquaresOptions lso;
    lso.max_iterations = opts.max_iterations;
    lso.parameter_tolerance = opts.parameter_tolerance;
    const auto res = levenberg_marquardt(residual, p0, scale, lso);

    const auto cov = covariance_from_jacobian(res.jacobian, res.cost);
    if (!cov || !res.params.allFinite() || res.params[1] == 0.0)
        throw UnfittableError("fit_fano: degenerate Jacobian, parameters not identifiable");

    const double sign = res.params[1] < 0.0 ? -1.0 : 1.0;
    FanoFit out;
    out.params.f0_hz = centre + res.params[0] * span;
    out.params.gamma_hz = std::abs(res.params[1]) * span;
    out.params.fano_q = sign * res.params[2];
    out.params.amp = res.params[3];
    out.params.offset = res.params[4];
    if (out.params.f0_hz < freq.front() || out.params.f0_hz > freq.back())
        throw UnfittableError("fit_fano: fitted centre falls outside the trace");

    Eigen::Matrix<double, 5, 5> jac = Eigen::Matrix<double, 5, 5>::Zero();
    jac.diagonal() << span, sign * span, sign, 1.0, 1.0;
    const Eigen::Matrix<double, 5, 5> covariance = jac * (*cov) * jac.transpose();
    out.report = make_quality_report(out.params, covariance, std::sqrt(res.cost / static_cast<double>(n)));
    out.converged = res.converged;
    out.iterations = res.iterations;
    return out;
}


std::vector<FanoParams> find_peaks(const Trace& trace, double min_prominence, double min_q)
{
    const auto& f = trace.freq_hz();
    const auto& y = trace.s21();
    const std::size_t n = trace.size();
    if (n < 3)
        return {};

    const double baseline = median_of(y);
    std::vector<double> dev(n);
    for (std::size_t i = 0; i < n; ++i)
        dev[i] = y[i] - baseline;

    struct Candidate
    {
        FanoParams guess;
        double height;
    };
    std::vector<Candidate> candidates;

    auto sign_of = [](double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); };
    std::size_t i = 0;
    while (i < n)
    {
        if (std::abs(dev[i]) <= min_prominence)
        {
            ++i;
            continue;
        }
        const int polarity = sign_of(dev[i]);
        std::size_t end = i;
        std::size_t peak = i;
        while (end < n && sign_of(dev[end]) == polarity && std::abs(dev[end]) > min_prominence)
        {
            if (std::abs(dev[end]) > std::abs(dev[peak]))
                peak = end;
            ++end;
        }

        const double height = std::abs(dev[peak]);
        const double half = 0.5 * height;
        auto crossing = [&](std::ptrdiff_t step) {
            std::ptrdiff_t j = static_cast<std::ptrdiff_t>(peak);
            while (true)
            {
                const std::ptrdiff_t next = j + step;
                if (next < 0 || next >= static_cast<std::ptrdiff_t>(n))
                    return f[static_cast<std::size_t>(j)];
                const double v = polarity * dev[static_cast<std::size_t>(next)];
                if (v < half)
                {
                    const double v0 = polarity * dev[static_cast<std::size_t>(j)];
                    const double t = (v0 - half) / (v0 - v);
                    return f[static_cast<std::size_t>(j)] + t * (f[static_cast<std::size_t>(next)] - f[static_cast<std::size_t>(j)]);
                }
                j = next;
            }
        };
        const double left = crossing(-1);
        const double right = crossing(+1);
        const double spacing = f[std::min(peak + 1, n - 1)] - f[peak == 0 ? 0 : peak - 1];
        const double width = std::max(right - left, 0.5 * spacing);

        FanoParams g;
        g.f0_hz = f[peak];
        g.gamma_hz = width;
        g.fano_q = 0.0;
        g.amp = dev[peak];
        g.offset = baseline;
        candidates.push_back({g, height});
        i = end;
    }

    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.height > b.height; });
    std::vector<FanoParams> kept;
    for (const auto& c : candidates)
    {
        bool shadowed = false;
        for (const auto& k : kept)
            shadowed = shadowed ||
                       std::abs(k.f0_hz - c.guess.f0_hz) < 3.0 * std::max(k.gamma_hz, c.guess.gamma_hz);
        if (!shadowed)
            kept.push_back(c.guess);
    }
    std::erase_if(kept, [min_q](const FanoParams& g) { return g.f0_hz / g.gamma_hz < min_q; });
    std::sort(kept.begin(), kept.end(), [](const FanoParams& a, const FanoParams& b) { return a.f0_hz < b.f0_hz; });
    return kept;
}

FanoFit fit_local(const Trace& trace, const FanoParams& guess, double half_width_linewidths, const FanoFitOptions& opts)
{
    const auto& f = trace.freq_hz();
    const double half = half_width_linewidths * guess.gamma_hz;
    auto lo = static_cast<std::size_t>(std::lower_bound(f.begin(), f.end(), guess.f0_hz - half) - f.begin());
    auto hi = static_cast<std::size_t>(std::upper_bound(f.begin(), f.end(), guess.f0_hz + half) - f.begin());
    constexpr std::size_t kMinSamples = 16;
    while (hi - lo < kMinSamples && (lo > 0 || hi < f.size()))
    {
        if (lo > 0)
            --lo;
        if (hi < f.size())
            ++hi;
    }
    if (hi <= lo)
        throw UnfittableError("fit_local: no samples near the guess");
    return fit_fano(trace.slice(f[lo], f[hi - 1]), guess, opts);
}

std::vector<CensusEntry> census(const Trace& trace, const CensusOptions& opts)
{
    const auto guesses = find_peaks(trace, opts.min_prominence, opts.min_q);
    std::vector<CensusEntry> out(guesses.size());
    parallel_for(guesses.size(), opts.threads, [&](std::size_t i) {
        try
        {
            out[i].fit = fit_local(trace, guesses[i], opts.fit_half_width_linewidths);
            out[i].status = out[i].fit.converged ? "ok" : "not-converged";
        }
        catch (const UnfittableError&)
        {
            out[i].fit.params = guesses[i];
            out[i].status = "unfittable";
        }
    });
    return out;
}

} // namespace mmesr
