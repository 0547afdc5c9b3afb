#include "mmesr/errors.hpp"
#include "mmesr/lineshape.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace mmesr;

namespace
{

constexpr double kF0 = 14.934048e9;
constexpr double kGamma = 2.28e3;

std::vector<double> grid(double centre, double half_span, int points)
{
    std::vector<double> f(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i)
        f[static_cast<std::size_t>(i)] = centre - half_span + 2.0 * half_span * i / (points - 1);
    return f;
}

Trace render(const FanoParams& p, const std::vector<double>& f, double noise = 0.0, unsigned seed = 0)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> y(f.size());
    for (std::size_t i = 0; i < f.size(); ++i)
        y[i] = fano_model(p, f[i]) + (noise > 0.0 ? noise * gauss(rng) : 0.0);
    return Trace::from_linear(f, y);
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

} // namespace

TEST_CASE("fano_model reference values")
{
    FanoParams p{kF0, kGamma, 0.0, 1.0, 0.0};
    CHECK(fano_model(p, kF0) == doctest::Approx(1.0));
    CHECK(fano_model(p, kF0 + kGamma / 2) == doctest::Approx(0.5));
    CHECK(fano_model(p, kF0 - kGamma / 2) == doctest::Approx(0.5));
    p.fano_q = 1.0;
    CHECK(std::abs(fano_model(p, kF0)) < 1e-15);
}

TEST_CASE("fano_model mirror symmetry and even Lorentzian")
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 500; ++trial)
    {
        const double q = 3.0 * u(rng);
        const double d = 5.0 * kGamma * u(rng);
        FanoParams a{kF0, kGamma, q, 0.7, 0.1};
        FanoParams b = a;
        b.fano_q = -q;
        CHECK(fano_model(a, kF0 + d) == doctest::Approx(fano_model(b, kF0 - d)).epsilon(1e-12));
        a.fano_q = 0.0;
        CHECK(fano_model(a, kF0 + d) == doctest::Approx(fano_model(a, kF0 - d)).epsilon(1e-12));
    }
}

TEST_CASE("sampled Lorentzian FWHM equals gamma within one grid step")
{
    const FanoParams p{kF0, kGamma, 0.0, 1.0, 0.0};
    const auto f = grid(kF0, 5 * kGamma, 2001);
    const double step = f[1] - f[0];
    double lo = 0, hi = 0;
    for (std::size_t i = 0; i < f.size(); ++i)
        if (fano_model(p, f[i]) >= 0.5)
        {
            if (lo == 0)
                lo = f[i];
            hi = f[i];
        }
    CHECK(std::abs((hi - lo) - kGamma) <= step);
}

TEST_CASE("noiseless recovery of the narrow reference mode")
{
    const FanoParams truth{kF0, kGamma, 0.0, 1.0, 0.0};
    const auto t = render(truth, grid(kF0, 10 * kGamma, 400));
    FanoParams guess{kF0 + 0.3 * kGamma, 1.4 * kGamma, 0.05, 0.8, 0.02};
    const auto fit = fit_fano(t, guess);
    CHECK(fit.converged);
    CHECK(std::abs(fit.params.f0_hz - kF0) < 1e-6 * kGamma);
    CHECK(rel(fit.params.gamma_hz, kGamma) < 1e-6);
    CHECK(std::abs(fit.params.fano_q) < 1e-6);
    CHECK(rel(fit.params.amp, 1.0) < 1e-6);
    CHECK(std::abs(fit.params.offset) < 1e-6);
    CHECK(fit.report.q_factor == doctest::Approx(kF0 / kGamma).epsilon(1e-6));
    CHECK(rel(fit.report.q_factor, 6.55e6) < 0.001);
    CHECK(fit.report.loss_tangent * fit.report.q_factor == 1.0);
}

TEST_CASE("noiseless recovery over random parameter draws")
{
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int failures = 0;
    for (int trial = 0; trial < 100; ++trial)
    {
        FanoParams truth;
        truth.gamma_hz = std::pow(10.0, 3.0 + 3.0 * u(rng));
        truth.f0_hz = 5e9 + 15e9 * u(rng);
        truth.fano_q = -1.5 + 3.0 * u(rng);
        truth.amp = (u(rng) < 0.5 ? -1.0 : 1.0) * (0.2 + u(rng));
        truth.offset = 0.5 * u(rng);
        const auto t = render(truth, grid(truth.f0_hz, 8 * truth.gamma_hz, 300));
        FanoParams guess = truth;
        guess.f0_hz += 0.2 * truth.gamma_hz * (u(rng) - 0.5);
        guess.gamma_hz *= 0.85 + 0.3 * u(rng);
        guess.fano_q += 0.2 * (u(rng) - 0.5);
        guess.amp *= 0.9 + 0.2 * u(rng);
        const auto fit = fit_fano(t, guess);
        const bool ok = fit.converged && std::abs(fit.params.f0_hz - truth.f0_hz) < 1e-6 * truth.f0_hz &&
                        rel(fit.params.gamma_hz, truth.gamma_hz) < 1e-6 &&
                        std::abs(fit.params.fano_q - truth.fano_q) < 1e-6 * std::max(1.0, std::abs(truth.fano_q)) &&
                        rel(fit.params.amp, truth.amp) < 1e-6 &&
                        std::abs(fit.params.offset - truth.offset) < 1e-6 * std::max(1.0, std::abs(truth.offset));
        if (!ok)
            ++failures;
    }
    CHECK(failures == 0);
}

TEST_CASE("Monte-Carlo with 1% noise on 200 points")
{
    const FanoParams truth{kF0, kGamma, 0.0, 1.0, 0.0};
    const auto f = grid(kF0, 5 * kGamma, 200);
    int bad_f0 = 0, bad_q = 0, bad_rms = 0;
    for (unsigned seed = 1; seed <= 100; ++seed)
    {
        const double sigma = 0.01;
        const auto t = render(truth, f, sigma, seed);
        double noise_ss = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i)
            noise_ss += std::pow(t.s21()[i] - fano_model(truth, f[i]), 2);
        const double noise_rms = std::sqrt(noise_ss / static_cast<double>(f.size()));
        const auto fit = fit_fano(t, FanoParams{kF0 + 200.0, 1.2 * kGamma, 0.0, 0.9, 0.0});
        bad_f0 += std::abs(fit.params.f0_hz - kF0) >= kGamma / 10;
        bad_q += rel(fit.report.q_factor, truth.q_factor()) >= 0.05;
        bad_rms += fit.report.residual_rms > 1.1 * noise_rms;
    }
    CHECK(bad_f0 == 0);
    CHECK(bad_q == 0);
    CHECK(bad_rms == 0);
}

TEST_CASE("fit_fano error paths")
{
    const auto f = grid(kF0, 5 * kGamma, 100);
    const auto flat = Trace::from_linear(f, std::vector<double>(f.size(), 0.3));
    CHECK_THROWS_AS(fit_fano(flat, FanoParams{kF0, kGamma, 0.0, 1.0, 0.0}), UnfittableError);

    const auto short_trace = render(FanoParams{kF0, kGamma, 0.0, 1.0, 0.0}, grid(kF0, kGamma, 6));
    CHECK_THROWS_AS(fit_fano(short_trace, FanoParams{kF0, kGamma, 0.0, 1.0, 0.0}), UnfittableError);
}

TEST_CASE("Trace conversions")
{
    const auto t = Trace::from_db({1.0, 2.0, 3.0}, {0.0, -20.0, -6.0});
    CHECK(t.s21()[0] == doctest::Approx(1.0));
    CHECK(t.s21()[1] == doctest::Approx(0.1));
    CHECK_THROWS_AS(Trace::from_db({1.0, 1.0}, {0.0, 0.0}), DataError);
    CHECK_THROWS_AS(Trace::from_db({1.0, 2.0}, {0.0}), DataError);
    const auto s = t.slice(1.5, 3.0);
    CHECK(s.size() == 2);
    CHECK(s.freq_hz()[0] == 2.0);
}

TEST_CASE("find_peaks single and double resonances")
{
    const auto f = grid(kF0, 20 * kGamma, 801);
    const double step = f[1] - f[0];
    {
        const auto t = render(FanoParams{kF0 + 3.3 * step, kGamma, 0.0, 1.0, 0.0}, f);
        const auto peaks = find_peaks(t, 0.1, 0.0);
        REQUIRE(peaks.size() == 1);
        CHECK(std::abs(peaks[0].f0_hz - (kF0 + 3.3 * step)) <= 2 * step);
        CHECK(rel(peaks[0].gamma_hz, kGamma) < 0.1);
    }
    {
        const double a = kF0 - 5 * kGamma, b = kF0 + 5 * kGamma;
        std::vector<double> y(f.size());
        for (std::size_t i = 0; i < f.size(); ++i)
            y[i] = fano_model({a, kGamma, 0.0, 1.0, 0.0}, f[i]) + fano_model({b, kGamma, 0.0, 0.6, 0.0}, f[i]);
        const auto peaks = find_peaks(Trace::from_linear(f, y), 0.1, 0.0);
        REQUIRE(peaks.size() == 2);
        CHECK(std::abs(peaks[0].f0_hz - a) <= 2 * step);
        CHECK(std::abs(peaks[1].f0_hz - b) <= 2 * step);
    }
    {
        // dip on a unit baseline
        const auto t = render(FanoParams{kF0, kGamma, 0.0, -0.5, 1.0}, f);
        const auto peaks = find_peaks(t, 0.1, 0.0);
        REQUIRE(peaks.size() == 1);
        CHECK(peaks[0].amp < 0.0);
    }
    {
        const auto t = render(FanoParams{kF0, kGamma, 0.0, 1.0, 0.0}, f);
        CHECK(find_peaks(t, 0.1, 1e7).empty());
    }
}

TEST_CASE("find_peaks false-positive rate on pure noise at 5 sigma")
{
    const auto f = grid(kF0, 20 * kGamma, 400);
    const double sigma = 0.01;
    int hits = 0;
    for (unsigned seed = 0; seed < 1000; ++seed)
    {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gauss(1.0, sigma);
        std::vector<double> y(f.size());
        for (auto& v : y)
            v = gauss(rng);
        hits += !find_peaks(Trace::from_linear(f, y), 5 * sigma, 0.0).empty();
    }
    CHECK(hits <= 10);
}

TEST_CASE("census fits every detected resonance")
{
    const auto f = grid(kF0, 60 * kGamma, 3001);
    std::vector<double> y(f.size());
    const double centres[] = {kF0 - 30 * kGamma, kF0, kF0 + 25 * kGamma};
    for (std::size_t i = 0; i < f.size(); ++i)
    {
        y[i] = 0.05;
        for (double c : centres)
            y[i] += fano_model({c, kGamma, 0.2, 0.8, 0.0}, f[i]);
    }
    CensusOptions opts;
    opts.min_prominence = 0.2;
    opts.threads = 3;
    const auto entries = census(Trace::from_linear(f, y), opts);
    REQUIRE(entries.size() == 3);
    for (std::size_t k = 0; k < 3; ++k)
    {
        CHECK(entries[k].status == "ok");
        // neighbouring tails inside each window bias the local fits slightly
        CHECK(std::abs(entries[k].fit.params.f0_hz - centres[k]) < 0.05 * kGamma);
        CHECK(rel(entries[k].fit.params.gamma_hz, kGamma) < 0.05);
    }
}
