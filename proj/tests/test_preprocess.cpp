#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "zia/preprocess.hpp"
#include "zia/rng.hpp"

using namespace zia;
using namespace zia::preprocess;

namespace {
// Single-bin DFT amplitude at frequency f, skipping edge samples.
double amplitude_at(const std::vector<double>& x, double f, double fs, int skip = 256) {
    double re = 0.0, im = 0.0;
    int n = 0;
    for (std::size_t i = static_cast<std::size_t>(skip); i + static_cast<std::size_t>(skip) < x.size(); ++i) {
        const double arg = 2.0 * kPi * f * static_cast<double>(i) / fs;
        re += x[i] * std::cos(arg);
        im += x[i] * std::sin(arg);
        ++n;
    }
    return 2.0 * std::sqrt(re * re + im * im) / n;
}

std::vector<double> sine(double f, double fs, int n, double amp = 1.0, double phase = 0.0) {
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        x[static_cast<std::size_t>(i)] = amp * std::sin(2.0 * kPi * f * i / fs + phase);
    return x;
}
}  // namespace

TEST_CASE("ema fixed point, hand recurrence and identity alpha") {
    CHECK(ema_smooth(std::vector<double>{5.0, 5.0, 5.0}, 0.9) ==
          std::vector<double>{5.0, 5.0, 5.0});
    const auto y = ema_smooth(std::vector<double>{0.0, 10.0}, 0.9);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == Catch::Approx(9.0));
    const std::vector<double> x{3.0, -1.0, 4.0, 1.0, 5.0};
    CHECK(ema_smooth(x, 1.0) == x);
    CHECK_THROWS_AS(ema_smooth(std::vector<double>{}, 0.9), std::invalid_argument);
    CHECK_THROWS_AS(ema_smooth(x, 0.0), std::invalid_argument);
}

TEST_CASE("ema is shift-equivariant") {
    rng::Stream g(3, "ema");
    std::vector<double> x(200);
    for (auto& v : x) v = g.normal();
    std::vector<double> xc = x;
    for (auto& v : xc) v += 17.5;
    const auto a = ema_smooth(x, 0.3);
    const auto b = ema_smooth(xc, 0.3);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] - a[i] == Catch::Approx(17.5).epsilon(1e-12));
}

TEST_CASE("ema output stays within the input range") {
    rng::Stream g(4, "ema2");
    std::vector<double> x(500);
    for (auto& v : x) v = g.uniform(-3.0, 7.0);
    const auto y = ema_smooth(x, 0.25);
    const double lo = *std::min_element(x.begin(), x.end());
    const double hi = *std::max_element(x.begin(), x.end());
    for (double v : y) {
        CHECK(v >= lo - 1e-12);
        CHECK(v <= hi + 1e-12);
    }
}

TEST_CASE("outlier clipping clamps a lone spike to baseline + 3 scale") {
    std::vector<double> x(50, 2.0);
    x[25] = 2.0 + 10.0 * 0.12;  // spike at baseline + 10 b
    const auto y = clip_outliers(x, 0.12);
    CHECK(y[25] == Catch::Approx(2.0 + 0.36));
    // Everything in-range passes through untouched.
    std::vector<double> calm(50, 2.0);
    calm[10] = 2.0 + 0.2 * 0.12;
    const auto z = clip_outliers(calm, 0.12);
    CHECK(z[10] == Catch::Approx(calm[10]));
}

TEST_CASE("outlier clipping passes a sustained level shift after one sample") {
    // A saccade to a new fixation is not an outlier: once the baseline has
    // tracked the raw input, subsequent samples pass through unclipped.
    std::vector<double> x(40, 0.0);
    for (std::size_t t = 20; t < x.size(); ++t) x[t] = 300.0;
    const auto y = clip_outliers(x, 0.12);
    CHECK(std::abs(y[20] - 0.36) < 1e-9);           // arrival sample is trimmed
    CHECK(std::abs(y[22] - 300.0) < 300.0 * 0.05);  // two samples later: settled
    CHECK(y[30] == Catch::Approx(300.0).margin(1e-6));
}

TEST_CASE("infinite clip threshold is the identity") {
    rng::Stream g(9, "clip");
    std::vector<double> x(100);
    for (auto& v : x) v = g.normal(0.0, 5.0);
    const auto y = clip_outliers(x, 0.12, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == Catch::Approx(x[i]).margin(1e-12));
    CHECK_THROWS_AS(clip_outliers(x, 0.0), std::invalid_argument);
}

TEST_CASE("bandpass response matches the template via the DFT gain oracle") {
    FilterSpec spec;
    const auto design = design_bandpass(spec);
    const int n = 4096;
    // Passband: gain within [0.9, 1.1] across 10-28 Hz.
    for (const double f : {10.0, 12.0, 16.0, 20.0, 24.0, 28.0}) {
        const auto x = sine(f, spec.sample_rate_hz, n);
        const auto y = filtfilt(design, x);
        const double gain = amplitude_at(y, f, spec.sample_rate_hz) /
                            amplitude_at(x, f, spec.sample_rate_hz);
        INFO("f=" << f << " gain=" << gain);
        CHECK(gain >= 0.9);
        CHECK(gain <= 1.1);
    }
    // Stopbands: at least 20 dB down at <= 2 Hz and >= 60 Hz.
    for (const double f : {1.0, 2.0, 60.0, 80.0}) {
        const auto x = sine(f, spec.sample_rate_hz, n);
        const auto y = filtfilt(design, x);
        const double gain = amplitude_at(y, f, spec.sample_rate_hz) /
                            amplitude_at(x, f, spec.sample_rate_hz);
        INFO("f=" << f << " gain=" << gain);
        CHECK(20.0 * std::log10(gain) <= -20.0);
    }
}

TEST_CASE("bandpass examples: 20 Hz passes, 1 Hz attenuated, zero stays zero") {
    FilterSpec spec;
    const int n = 2048;
    const auto pass = bandpass(sine(20.0, spec.sample_rate_hz, n), spec);
    const double g20 = amplitude_at(pass, 20.0, spec.sample_rate_hz);
    CHECK(g20 >= 0.9);
    CHECK(g20 <= 1.1);

    const auto stop = bandpass(sine(1.0, spec.sample_rate_hz, n), spec);
    const double g1 = amplitude_at(stop, 1.0, spec.sample_rate_hz);
    CHECK(20.0 * std::log10(g1 / 1.0) <= -20.0);

    const std::vector<double> zeros(512, 0.0);
    const auto out = bandpass(zeros, spec);
    for (double v : out) CHECK(v == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("bandpass rejects too-short input and invalid specs") {
    FilterSpec spec;
    const std::vector<double> shorty(10, 1.0);
    CHECK_THROWS_AS(bandpass(shorty, spec), std::invalid_argument);
    FilterSpec bad;
    bad.low_hz = 40.0;
    bad.high_hz = 30.0;
    CHECK_THROWS_AS(design_bandpass(bad), ConfigError);
    FilterSpec nyq;
    nyq.high_hz = 200.0;
    CHECK_THROWS_AS(design_bandpass(nyq), ConfigError);
}

TEST_CASE("filter coefficients dump to json") {
    const auto design = design_bandpass(FilterSpec{});
    const auto j = filter_to_json(design);
    CHECK(j["order"] == 4);
    CHECK(j["sections"].size() == 4);
    CHECK(j["sections"][0]["b"].size() == 3);
}

TEST_CASE("ica with nothing to remove reconstructs the input") {
    rng::Stream g(21, "ica1");
    const int k = 4, T = 2000;
    Tensor X(k, T);
    for (auto& v : X.v) v = g.normal();
    const auto res = ica_clean(X, 0.01, nullptr, /*kurtosis_threshold=*/20.0);
    REQUIRE_FALSE(res.warning);
    CHECK(res.removed.empty());
    for (int i = 0; i < X.size(); ++i)
        CHECK(res.cleaned.v[static_cast<std::size_t>(i)] ==
              Catch::Approx(X.v[static_cast<std::size_t>(i)]).margin(1e-6));
}

TEST_CASE("ica recovers two mixed laplacian sources up to permutation and sign") {
    rng::Stream g(22, "ica2");
    const int T = 8000;
    Tensor S(2, T);
    for (int t = 0; t < T; ++t) {
        S(0, t) = g.laplace(1.0);
        S(1, t) = g.laplace(1.0);
    }
    const Tensor A(2, 2, {0.9, 0.4, -0.3, 0.8});  // invertible mixing
    Tensor X = matmul(A, S);
    const auto res = ica_clean(X, 0.01, nullptr, 30.0);
    REQUIRE_FALSE(res.warning);

    const auto corr = [&](int si, int ri) {
        double sxy = 0, sxx = 0, syy = 0;
        for (int t = 0; t < T; ++t) {
            sxy += S(si, t) * res.sources(ri, t);
            sxx += S(si, t) * S(si, t);
            syy += res.sources(ri, t) * res.sources(ri, t);
        }
        return std::abs(sxy / std::sqrt(sxx * syy));
    };
    const double direct = std::min(corr(0, 0), corr(1, 1));
    const double swapped = std::min(corr(0, 1), corr(1, 0));
    CHECK(std::max(direct, swapped) >= 0.9);
}

TEST_CASE("ica removes a high-amplitude blink-like artifact") {
    rng::Stream g(23, "ica3");
    const int T = 6000;
    std::vector<double> blink(T, 0.0);
    for (int t = 0; t < T; ++t) {
        if (t % 500 < 12) blink[static_cast<std::size_t>(t)] = 40.0;  // super-Gaussian bursts
    }
    Tensor S(3, T);
    for (int t = 0; t < T; ++t) {
        S(0, t) = std::sin(2.0 * kPi * 12.0 * t / 256.0) * 3.0 + 0.3 * g.normal();
        S(1, t) = std::sin(2.0 * kPi * 19.0 * t / 256.0 + 0.7) * 3.0 + 0.3 * g.normal();
        S(2, t) = blink[static_cast<std::size_t>(t)] + 0.3 * g.normal();
    }
    Tensor A(3, 3, {0.8, 0.1, 0.6, -0.2, 0.9, 0.5, 0.3, -0.4, 0.7});
    Tensor X = matmul(A, S);

    const auto max_corr_with_blink = [&](const Tensor& M) {
        double best = 0.0;
        for (int i = 0; i < M.rows; ++i) {
            double sxy = 0, sxx = 0, syy = 0;
            for (int t = 0; t < T; ++t) {
                sxy += M(i, t) * blink[static_cast<std::size_t>(t)];
                sxx += M(i, t) * M(i, t);
                syy += blink[static_cast<std::size_t>(t)] * blink[static_cast<std::size_t>(t)];
            }
            best = std::max(best, std::abs(sxy / std::sqrt(sxx * syy)));
        }
        return best;
    };

    const auto res = ica_clean(X, 0.01, nullptr, 5.0);
    REQUIRE_FALSE(res.warning);
    REQUIRE_FALSE(res.removed.empty());
    const double before = max_corr_with_blink(X);
    const double after = max_corr_with_blink(res.cleaned);
    INFO("before=" << before << " after=" << after);
    CHECK(after <= 0.2 * before);
}

TEST_CASE("ica never increases total power and keeps the input shape") {
    rng::Stream g(24, "ica4");
    Tensor X(4, 3000);
    for (int t = 0; t < 3000; ++t) {
        X(0, t) = g.laplace(1.0);
        X(1, t) = g.laplace(2.0) + 1.0;
        X(2, t) = (t % 400 < 6) ? 30.0 : 0.2 * g.normal();
        X(3, t) = g.normal();
    }
    const auto res = ica_clean(X);
    CHECK(res.cleaned.rows == X.rows);
    CHECK(res.cleaned.cols == X.cols);
    const double pin = dot_all(X, X);
    const double pout = dot_all(res.cleaned, res.cleaned);
    CHECK(pout <= pin * (1.0 + 1e-9));
}

TEST_CASE("ica flags rank-deficient input and returns it unchanged") {
    Tensor X(3, 300);
    for (int t = 0; t < 300; ++t) {
        const double v = std::sin(0.1 * t);
        X(0, t) = v;
        X(1, t) = 2.0 * v;  // linearly dependent
        X(2, t) = -v;
    }
    const auto res = ica_clean(X);
    CHECK(res.warning);
    for (int i = 0; i < X.size(); ++i)
        CHECK(res.cleaned.v[static_cast<std::size_t>(i)] == X.v[static_cast<std::size_t>(i)]);
}

TEST_CASE("ica zeroes the component matching an artifact reference") {
    rng::Stream g(25, "ica5");
    const int T = 4000;
    Tensor refs(1, T);
    Tensor S(2, T);
    for (int t = 0; t < T; ++t) {
        const double burst = (t % 300 < 8) ? 25.0 : 0.0;
        refs(0, t) = burst;
        S(0, t) = g.laplace(1.5);
        S(1, t) = burst + 0.2 * g.normal();
    }
    Tensor A(2, 2, {1.0, 0.5, -0.4, 1.0});
    Tensor X = matmul(A, S);
    const auto res = ica_clean(X, 0.01, &refs);
    CHECK(res.removed.size() == 1);
}

TEST_CASE("ica validates its preconditions") {
    Tensor tiny(1, 100);
    CHECK_THROWS_AS(ica_clean(tiny), std::invalid_argument);
    Tensor shorty(4, 20);
    CHECK_THROWS_AS(ica_clean(shorty), std::invalid_argument);
}

TEST_CASE("time encoding: zeros and ones at t=0, sin(1) at t=1, range bound") {
    const auto e0 = encode_time(0);
    REQUIRE(e0.values.size() == 32);
    for (std::size_t i = 0; i < e0.values.size(); ++i)
        CHECK(e0.values[i] == Catch::Approx(i % 2 == 0 ? 0.0 : 1.0));

    const auto e1 = encode_time(1);
    CHECK(e1.values[0] == Catch::Approx(std::sin(1.0)));

    for (const std::int64_t t : {0L, 1L, 17L, 123456L}) {
        const auto e = encode_time(t);
        for (double v : e.values) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
        const auto again = encode_time(t);
        CHECK(e.values == again.values);
    }
    CHECK_THROWS_AS(encode_time(3, 7), std::invalid_argument);
}

TEST_CASE("heart smoothing is the same ema operation") {
    // The 0.9/0.1 recurrence for heart rate is ema_smooth with alpha = 0.9.
    std::vector<double> hr{70.0, 72.0, 71.0, 90.0, 68.0};
    const auto a = ema_smooth(hr, 0.9);
    std::vector<double> manual(hr.size());
    manual[0] = hr[0];
    for (std::size_t t = 1; t < hr.size(); ++t) manual[t] = 0.9 * hr[t] + 0.1 * manual[t - 1];
    for (std::size_t t = 0; t < hr.size(); ++t) CHECK(a[t] == Catch::Approx(manual[t]));
}
