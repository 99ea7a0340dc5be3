#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "zia/common.hpp"
#include "zia/rng.hpp"
#include "zia/tensor.hpp"

namespace zia::preprocess {

inline constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Smoothing and clipping
// ---------------------------------------------------------------------------

// y[0] = x[0]; y[t] = alpha*x[t] + (1-alpha)*y[t-1].
inline std::vector<double> ema_smooth(std::span<const double> x, double alpha) {
    if (x.empty()) throw std::invalid_argument("ema_smooth: empty input");
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("ema_smooth: alpha must be in (0,1]");
    std::vector<double> y(x.size());
    y[0] = x[0];
    for (std::size_t t = 1; t < x.size(); ++t) y[t] = alpha * x[t] + (1.0 - alpha) * y[t - 1];
    return y;
}

// Clamp deviations from a running EMA baseline to +-k*scale. The baseline
// tracks the raw input (lagged by one sample), so an isolated spike is
// trimmed against the local level while a sustained shift to a new fixation
// passes through after a single sample.
inline std::vector<double> clip_outliers(std::span<const double> x, double scale, double k = 3.0,
                                         double baseline_alpha = 0.9) {
    if (!(scale > 0.0)) throw std::invalid_argument("clip_outliers: scale must be > 0");
    if (x.empty()) return {};
    std::vector<double> y(x.size());
    y[0] = x[0];
    double baseline = x[0];
    const double bound = k * scale;
    for (std::size_t t = 1; t < x.size(); ++t) {
        double dev = x[t] - baseline;
        if (std::isfinite(bound)) dev = std::clamp(dev, -bound, bound);
        y[t] = baseline + dev;
        baseline = baseline_alpha * x[t] + (1.0 - baseline_alpha) * baseline;
    }
    return y;
}

// ---------------------------------------------------------------------------
// Bandpass filter (Butterworth, applied forward-backward for zero phase)
// ---------------------------------------------------------------------------

struct FilterSpec {
    double low_hz = 8.0;
    double high_hz = 30.0;
    double sample_rate_hz = 256.0;
    int order = 4;  // lowpass prototype order; the bandpass has 2*order poles

    void validate() const {
        if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < sample_rate_hz / 2.0))
            throw ConfigError("FilterSpec: need 0 < low < high < sample_rate/2");
        if (order < 1 || order > 8) throw ConfigError("FilterSpec: order must be in [1,8]");
    }
};

struct Biquad {
    double b0 = 1, b1 = 0, b2 = 0;  // numerator
    double a1 = 0, a2 = 0;          // denominator (a0 = 1)
};

struct BandpassDesign {
    std::vector<Biquad> sections;
    FilterSpec spec;
    double design_low_hz = 0.0;
    double design_high_hz = 0.0;

    // Minimum input length for filtfilt (reflection pad on each side).
    int warmup_len() const { return 3 * (2 * spec.order + 1); }
};

// Designs a Butterworth bandpass via the analog lowpass prototype, the
// lowpass->bandpass transform and the bilinear transform. The -3 dB design
// edges are widened relative to the nominal band ([0.8*low, 1.15*high]) so
// that the net forward-backward (magnitude-squared) response stays near
// unity over the interior of the nominal band while the stopbands keep
// >= 20 dB of attenuation.
inline BandpassDesign design_bandpass(const FilterSpec& spec) {
    spec.validate();
    using cd = std::complex<double>;
    const double fs = spec.sample_rate_hz;
    const double f_lo = 0.8 * spec.low_hz;
    const double f_hi = std::min(1.15 * spec.high_hz, 0.49 * fs);

    // Prewarped analog edges.
    const double w1 = 2.0 * fs * std::tan(kPi * f_lo / fs);
    const double w2 = 2.0 * fs * std::tan(kPi * f_hi / fs);
    const double w0 = std::sqrt(w1 * w2);
    const double bw = w2 - w1;

    const int n = spec.order;
    std::vector<cd> analog_poles;
    for (int kidx = 1; kidx <= n; ++kidx) {
        const double theta = kPi * (2.0 * kidx + n - 1.0) / (2.0 * n);
        const cd p(std::cos(theta), std::sin(theta));  // unit-circle LP prototype pole
        const cd a = 0.5 * bw * p;
        const cd d = std::sqrt(a * a - cd(w0 * w0, 0.0));
        analog_poles.push_back(a + d);
        analog_poles.push_back(a - d);
    }

    // Bilinear transform. Zeros: n at z=+1 (from s=0), n at z=-1 (from s=inf).
    const double K = 2.0 * fs;
    std::vector<cd> zpoles;
    for (const cd& s : analog_poles) zpoles.push_back((cd(K, 0) + s) / (cd(K, 0) - s));

    // Pair conjugate poles into biquads.
    std::vector<cd> upper;
    for (const cd& p : zpoles)
        if (p.imag() > 0.0) upper.push_back(p);
    if (static_cast<int>(upper.size()) != n)
        throw NumericalError("design_bandpass: pole pairing failed");

    BandpassDesign out;
    out.spec = spec;
    out.design_low_hz = f_lo;
    out.design_high_hz = f_hi;
    for (const cd& p : upper) {
        Biquad q;
        q.b0 = 1.0;
        q.b1 = 0.0;
        q.b2 = -1.0;  // zeros at z = +1 and z = -1
        q.a1 = -2.0 * p.real();
        q.a2 = std::norm(p);
        out.sections.push_back(q);
    }

    // Normalize gain to 1 at the geometric center of the nominal band.
    const double fc = std::sqrt(spec.low_hz * spec.high_hz);
    const cd z = std::exp(cd(0.0, 2.0 * kPi * fc / fs));
    cd h(1.0, 0.0);
    for (const Biquad& q : out.sections) {
        const cd num = q.b0 + q.b1 / z + q.b2 / (z * z);
        const cd den = 1.0 + q.a1 / z + q.a2 / (z * z);
        h *= num / den;
    }
    const double g = std::pow(1.0 / std::abs(h), 1.0 / n);
    for (Biquad& q : out.sections) {
        q.b0 *= g;
        q.b1 *= g;
        q.b2 *= g;
    }
    return out;
}

namespace detail {
inline void biquad_filter_inplace(const Biquad& q, std::vector<double>& x) {
    double s1 = 0.0, s2 = 0.0;
    for (double& xi : x) {
        const double y = q.b0 * xi + s1;
        s1 = q.b1 * xi - q.a1 * y + s2;
        s2 = q.b2 * xi - q.a2 * y;
        xi = y;
    }
}
}  // namespace detail

// Zero-phase filtering: odd-reflection pad, filter, reverse, filter, reverse.
inline std::vector<double> filtfilt(const BandpassDesign& design, std::span<const double> x) {
    const int pad = design.warmup_len();
    if (static_cast<int>(x.size()) <= pad)
        throw std::invalid_argument("filtfilt: input shorter than warm-up length " +
                                    std::to_string(pad));
    std::vector<double> ext;
    ext.reserve(x.size() + 2 * static_cast<std::size_t>(pad));
    for (int i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[static_cast<std::size_t>(i)]);
    ext.insert(ext.end(), x.begin(), x.end());
    const std::size_t last = x.size() - 1;
    for (int i = 1; i <= pad; ++i)
        ext.push_back(2.0 * x[last] - x[last - static_cast<std::size_t>(i)]);

    for (const Biquad& q : design.sections) detail::biquad_filter_inplace(q, ext);
    std::reverse(ext.begin(), ext.end());
    for (const Biquad& q : design.sections) detail::biquad_filter_inplace(q, ext);
    std::reverse(ext.begin(), ext.end());

    return std::vector<double>(ext.begin() + pad, ext.begin() + pad + static_cast<long>(x.size()));
}

inline std::vector<double> bandpass(std::span<const double> x, const FilterSpec& spec) {
    return filtfilt(design_bandpass(spec), x);
}

inline nlohmann::json filter_to_json(const BandpassDesign& d) {
    nlohmann::json j;
    j["low_hz"] = d.spec.low_hz;
    j["high_hz"] = d.spec.high_hz;
    j["sample_rate_hz"] = d.spec.sample_rate_hz;
    j["order"] = d.spec.order;
    j["design_low_hz"] = d.design_low_hz;
    j["design_high_hz"] = d.design_high_hz;
    auto sections = nlohmann::json::array();
    for (const Biquad& q : d.sections) {
        sections.push_back({{"b", {q.b0, q.b1, q.b2}}, {"a", {1.0, q.a1, q.a2}}});
    }
    j["sections"] = sections;
    return j;
}

// ---------------------------------------------------------------------------
// ICA artifact removal
// ---------------------------------------------------------------------------

namespace detail {
// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns eigenvalues
// (ascending) and the orthogonal matrix of column eigenvectors.
inline void jacobi_eig(Tensor a, std::vector<double>& evals, Tensor& evecs) {
    const int n = a.rows;
    evecs = Tensor::zeros(n, n);
    for (int i = 0; i < n; ++i) evecs(i, i) = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = evecs(i, p), viq = evecs(i, q);
                    evecs(i, p) = c * vip - s * viq;
                    evecs(i, q) = s * vip + c * viq;
                }
            }
        }
    }
    evals.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) evals[static_cast<std::size_t>(i)] = a(i, i);
}

inline double pearson_abs(std::span<const double> a, std::span<const double> b) {
    const std::size_t n = a.size();
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) { ma += a[i]; mb += b[i]; }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return std::abs(sab / std::sqrt(saa * sbb));
}
}  // namespace detail

struct IcaResult {
    Tensor cleaned;              // k x T reconstruction
    Tensor sources;              // k x T estimated components
    std::vector<int> removed;    // component indices zeroed
    std::vector<double> kurtosis;
    bool warning = false;
    std::string note;
};

// Whitening + kurtosis-driven fixed-point rotation (deflation). Components
// matching artifact references (|corr| >= 0.5), or with excess kurtosis above
// the threshold when no references are given, are zeroed before
// reconstruction. lambda damps the fixed-point update.
inline IcaResult ica_clean(const Tensor& X, double lambda = 0.01,
                           const Tensor* artifact_refs = nullptr,
                           double kurtosis_threshold = 5.0, std::uint64_t seed = 17) {
    const int k = X.rows;
    const long T = X.cols;
    if (k < 2) throw std::invalid_argument("ica_clean: need at least two channels");
    if (T < 10L * k) throw std::invalid_argument("ica_clean: need T >= 10*k samples");

    IcaResult res;
    std::vector<double> mean(static_cast<std::size_t>(k), 0.0);
    Tensor Xc = X;
    for (int i = 0; i < k; ++i) {
        double m = 0.0;
        for (long t = 0; t < T; ++t) m += X(i, static_cast<int>(t));
        m /= static_cast<double>(T);
        mean[static_cast<std::size_t>(i)] = m;
        for (long t = 0; t < T; ++t) Xc(i, static_cast<int>(t)) -= m;
    }

    // Covariance and whitening.
    Tensor cov(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = i; j < k; ++j) {
            double s = 0.0;
            for (long t = 0; t < T; ++t)
                s += Xc(i, static_cast<int>(t)) * Xc(j, static_cast<int>(t));
            cov(i, j) = cov(j, i) = s / static_cast<double>(T);
        }
    std::vector<double> evals;
    Tensor evecs;
    detail::jacobi_eig(cov, evals, evecs);
    double emax = 0.0;
    for (double e : evals) emax = std::max(emax, e);
    for (double e : evals) {
        if (emax <= 0.0 || e < 1e-12 * emax) {
            res.cleaned = X;
            res.sources = Tensor::zeros(k, static_cast<int>(T));
            res.warning = true;
            res.note = "rank-deficient covariance; input returned unchanged";
            return res;
        }
    }

    // Z = D^{-1/2} E^T Xc (k x T), unit covariance.
    Tensor white(k, k);  // D^{-1/2} E^T
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            white(i, j) = evecs(j, i) / std::sqrt(evals[static_cast<std::size_t>(i)]);
    Tensor Z = matmul(white, Xc);

    // Fixed-point kurtosis rotation, one component at a time.
    rng::Stream g(seed, "ica");
    Tensor W(k, k);  // rows are unmixing directions in whitened space
    for (int comp = 0; comp < k; ++comp) {
        std::vector<double> w(static_cast<std::size_t>(k));
        for (auto& x : w) x = g.normal();
        const auto orthonormalize = [&](std::vector<double>& v) {
            for (int prev = 0; prev < comp; ++prev) {
                double d = 0.0;
                for (int i = 0; i < k; ++i) d += v[static_cast<std::size_t>(i)] * W(prev, i);
                for (int i = 0; i < k; ++i) v[static_cast<std::size_t>(i)] -= d * W(prev, i);
            }
            double nrm = 0.0;
            for (double x : v) nrm += x * x;
            nrm = std::sqrt(nrm);
            if (nrm < 1e-12) {
                for (auto& x : v) x = g.normal();
                nrm = 0.0;
                for (double x : v) nrm += x * x;
                nrm = std::sqrt(nrm);
            }
            for (auto& x : v) x /= nrm;
        };
        orthonormalize(w);
        for (int iter = 0; iter < 300; ++iter) {
            std::vector<double> fp(static_cast<std::size_t>(k), 0.0);
            for (long t = 0; t < T; ++t) {
                double y = 0.0;
                for (int i = 0; i < k; ++i) y += w[static_cast<std::size_t>(i)] * Z(i, static_cast<int>(t));
                const double y3 = y * y * y;
                for (int i = 0; i < k; ++i)
                    fp[static_cast<std::size_t>(i)] += Z(i, static_cast<int>(t)) * y3;
            }
            std::vector<double> wn(static_cast<std::size_t>(k));
            for (int i = 0; i < k; ++i)
                wn[static_cast<std::size_t>(i)] =
                    fp[static_cast<std::size_t>(i)] / static_cast<double>(T) -
                    3.0 * w[static_cast<std::size_t>(i)] + lambda * w[static_cast<std::size_t>(i)];
            orthonormalize(wn);
            double align = 0.0;
            for (int i = 0; i < k; ++i)
                align += wn[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i)];
            w = wn;
            if (std::abs(std::abs(align) - 1.0) < 1e-12) break;
        }
        for (int i = 0; i < k; ++i) W(comp, i) = w[static_cast<std::size_t>(i)];
    }

    Tensor S = matmul(W, Z);  // k x T components

    // Flag artifact components.
    res.kurtosis.resize(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        double m2 = 0, m4 = 0;
        for (long t = 0; t < T; ++t) {
            const double s = S(i, static_cast<int>(t));
            m2 += s * s;
            m4 += s * s * s * s;
        }
        m2 /= static_cast<double>(T);
        m4 /= static_cast<double>(T);
        res.kurtosis[static_cast<std::size_t>(i)] = (m2 > 0) ? m4 / (m2 * m2) - 3.0 : 0.0;
    }
    std::vector<bool> drop(static_cast<std::size_t>(k), false);
    if (artifact_refs != nullptr && artifact_refs->rows > 0) {
        if (artifact_refs->cols != static_cast<int>(T))
            throw std::invalid_argument("ica_clean: artifact reference length mismatch");
        for (int r = 0; r < artifact_refs->rows; ++r) {
            std::span<const double> ref(&artifact_refs->v[static_cast<std::size_t>(r) *
                                                          static_cast<std::size_t>(T)],
                                        static_cast<std::size_t>(T));
            int best = -1;
            double best_corr = 0.0;
            for (int i = 0; i < k; ++i) {
                std::span<const double> src(&S.v[static_cast<std::size_t>(i) *
                                                 static_cast<std::size_t>(T)],
                                            static_cast<std::size_t>(T));
                const double c = detail::pearson_abs(src, ref);
                if (c > best_corr) { best_corr = c; best = i; }
            }
            if (best >= 0 && best_corr >= 0.5) drop[static_cast<std::size_t>(best)] = true;
        }
    } else {
        for (int i = 0; i < k; ++i)
            if (res.kurtosis[static_cast<std::size_t>(i)] > kurtosis_threshold)
                drop[static_cast<std::size_t>(i)] = true;
    }
    for (int i = 0; i < k; ++i)
        if (drop[static_cast<std::size_t>(i)]) {
            res.removed.push_back(i);
            for (long t = 0; t < T; ++t) S(i, static_cast<int>(t)) = 0.0;
        }

    // Reconstruct: X' = E D^{1/2} W^T S + mean.
    Tensor dewhite(k, k);  // E D^{1/2}
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            dewhite(i, j) = evecs(i, j) * std::sqrt(evals[static_cast<std::size_t>(j)]);
    Tensor recon = matmul(dewhite, matmul_tn(W, S));
    for (int i = 0; i < k; ++i)
        for (long t = 0; t < T; ++t)
            recon(i, static_cast<int>(t)) += mean[static_cast<std::size_t>(i)];

    res.cleaned = std::move(recon);
    res.sources = std::move(S);
    return res;
}

// ---------------------------------------------------------------------------
// Context encoding
// ---------------------------------------------------------------------------

struct ContextEncoding {
    std::vector<double> values;  // every component in [-1, 1]
};

// Sinusoidal time encoding: even i -> sin(t / 10000^(i/dim)),
// odd i -> cos(t / 10000^((i-1)/dim)).
inline ContextEncoding encode_time(std::int64_t t, int dim = 32) {
    if (dim <= 0 || dim % 2 != 0) throw std::invalid_argument("encode_time: dim must be even");
    ContextEncoding enc;
    enc.values.resize(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) {
        const int base = (i % 2 == 0) ? i : i - 1;
        const double denom = std::pow(10000.0, static_cast<double>(base) / dim);
        const double arg = static_cast<double>(t) / denom;
        enc.values[static_cast<std::size_t>(i)] = (i % 2 == 0) ? std::sin(arg) : std::cos(arg);
    }
    return enc;
}

// One-hot categorical encoding appended after the time sinusoids.
inline void append_one_hot(std::vector<double>& out, int value, int vocab) {
    const std::size_t base = out.size();
    out.resize(base + static_cast<std::size_t>(vocab), 0.0);
    if (value >= 0 && value < vocab) out[base + static_cast<std::size_t>(value)] = 1.0;
}

}  // namespace zia::preprocess
