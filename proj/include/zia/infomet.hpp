#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "zia/common.hpp"
#include "zia/preprocess.hpp"
#include "zia/signals.hpp"

namespace zia::info {

inline double log2d(double x) { return std::log2(x); }

// -sum p log2 p with 0 log 0 = 0. Input must be normalized.
inline double entropy_bits(std::span<const double> p) {
    double sum = 0.0;
    for (double x : p) {
        if (x < -1e-12) throw std::invalid_argument("entropy_bits: negative probability");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("entropy_bits: probabilities sum to " + fmt_double(sum));
    double h = 0.0;
    for (double x : p)
        if (x > 0.0) h -= x * log2d(x);
    return h;
}

// ---------------------------------------------------------------------------
// Exact computations on explicit discrete joints
// ---------------------------------------------------------------------------

// Normalized joint over (intent, feature_1, ..., feature_m); axis 0 is the
// intent. Stored dense in row-major order over `dims`.
struct DiscreteJoint {
    std::vector<int> dims;
    std::vector<double> p;

    static DiscreteJoint from_table(std::vector<int> dims, std::vector<double> table) {
        DiscreteJoint j;
        j.dims = std::move(dims);
        j.p = std::move(table);
        j.validate();
        return j;
    }

    std::size_t cell_count() const {
        std::size_t n = 1;
        for (int d : dims) n *= static_cast<std::size_t>(d);
        return n;
    }

    void validate() const {
        if (dims.size() < 2) throw std::invalid_argument("DiscreteJoint: need >= 2 axes");
        if (p.size() != cell_count())
            throw std::invalid_argument("DiscreteJoint: table size does not match dims");
        double s = 0.0;
        for (double x : p) {
            if (x < 0.0) throw std::invalid_argument("DiscreteJoint: negative entry");
            s += x;
        }
        if (std::abs(s - 1.0) > 1e-9)
            throw std::invalid_argument("DiscreteJoint: entries sum to " + fmt_double(s));
    }

    // Marginal over the given axes (kept in the listed order).
    DiscreteJoint marginal(const std::vector<int>& keep_axes) const {
        DiscreteJoint out;
        for (int a : keep_axes) out.dims.push_back(dims[static_cast<std::size_t>(a)]);
        out.p.assign(out.cell_count(), 0.0);
        std::vector<int> idx(dims.size(), 0);
        for (std::size_t flat = 0; flat < p.size(); ++flat) {
            std::size_t oflat = 0;
            for (int a : keep_axes)
                oflat = oflat * static_cast<std::size_t>(dims[static_cast<std::size_t>(a)]) +
                        static_cast<std::size_t>(idx[static_cast<std::size_t>(a)]);
            out.p[oflat] += p[flat];
            for (int a = static_cast<int>(dims.size()) - 1; a >= 0; --a) {
                if (++idx[static_cast<std::size_t>(a)] < dims[static_cast<std::size_t>(a)]) break;
                idx[static_cast<std::size_t>(a)] = 0;
            }
        }
        return out;
    }
};

inline double joint_entropy_bits(const DiscreteJoint& j) {
    double h = 0.0;
    for (double x : j.p)
        if (x > 0.0) h -= x * log2d(x);
    return h;
}

// I(axis0 ; all remaining axes) = H(X) + H(Y) - H(X,Y).
inline double mutual_information_bits(const DiscreteJoint& j) {
    std::vector<int> rest;
    for (int a = 1; a < static_cast<int>(j.dims.size()); ++a) rest.push_back(a);
    const double hx = joint_entropy_bits(j.marginal({0}));
    const double hy = joint_entropy_bits(j.marginal(rest));
    const double hxy = joint_entropy_bits(j);
    return hx + hy - hxy;
}

// H(intent | features) = H(intent) - I(intent; features).
inline double conditional_entropy_bits(const DiscreteJoint& j) {
    return joint_entropy_bits(j.marginal({0})) - mutual_information_bits(j);
}

// The stated bound E[err] <= H(I|S). A bits-valued diagnostic, not a
// probability.
inline double error_bound(double h_cond_bits) {
    if (h_cond_bits < 0.0) throw std::invalid_argument("error_bound: negative entropy");
    return h_cond_bits;
}

// Literal evaluation of (H - H_cond) / H * 100.
inline double projected_accuracy_pct(double h_bits, double h_cond_bits) {
    if (!(h_bits > 0.0)) throw std::invalid_argument("projected_accuracy: H must be > 0");
    if (h_cond_bits < 0.0 || h_cond_bits > h_bits)
        throw std::invalid_argument("projected_accuracy: need 0 <= H_cond <= H");
    return (h_bits - h_cond_bits) / h_bits * 100.0;
}

// ---------------------------------------------------------------------------
// Plug-in estimation from samples
// ---------------------------------------------------------------------------

namespace detail {

struct KeyHash {
    std::size_t operator()(const std::vector<int>& k) const noexcept {
        std::uint64_t h = 1469598103934665603ull;
        for (int x : k) {
            h ^= static_cast<std::uint64_t>(x) + 0x9e3779b97f4a7c15ull;
            h *= 1099511628211ull;
        }
        return static_cast<std::size_t>(h);
    }
};

using CountMap = std::unordered_map<std::vector<int>, std::int64_t, KeyHash>;

inline double entropy_from_counts(const CountMap& counts, double n) {
    double h = 0.0;
    for (const auto& [key, c] : counts) {
        const double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return h;
}

// Jackknife bias estimate for a plug-in entropy: (n-1)*(mean_loo - H_n).
// Leave-one-out entropies only depend on which cell the removed sample sits
// in, so the computation is O(cells).
inline double entropy_jackknife_bias(const CountMap& counts, double n) {
    if (n < 2) return 0.0;
    const double hn = entropy_from_counts(counts, n);
    const double m = n - 1.0;
    // Base value if the removed sample did not change any cell membership:
    // recompute contribution per cell.
    double mean_loo = 0.0;
    // Precompute full-sample plogp sum in nats-free bits form.
    // H_{-i} where i is in cell c: all cells keep count except c -> c-1,
    // total n-1.
    // H = -sum_j (cj'/m) log2(cj'/m).
    // Compute sum over cells of cj*log2(cj) once; adjust per removed cell.
    double sum_clogc = 0.0;
    for (const auto& [key, c] : counts)
        sum_clogc += static_cast<double>(c) * std::log2(static_cast<double>(c));
    for (const auto& [key, c] : counts) {
        const double cd = static_cast<double>(c);
        double s = sum_clogc - cd * std::log2(cd);
        if (c > 1) s += (cd - 1.0) * std::log2(cd - 1.0);
        const double h_loo = std::log2(m) - s / m;
        mean_loo += (cd / n) * h_loo;
    }
    return m * (mean_loo - hn);
}

}  // namespace detail

// Exact joint P(I_t, s_{t-w+1}, ..., s_t) for a Markov intent chain with a
// per-intent discrete emission model, built by enumerating intent paths.
// Axis 0 is the intent at the window end; signal axes run oldest to newest.
// Marginalizing leading signal axes yields the shorter-window joints, so the
// accumulation diagnostic I(I_t; window) is exactly monotone in the window
// length on the returned family.
inline DiscreteJoint markov_window_joint(const std::vector<std::vector<double>>& transition,
                                         const std::vector<std::vector<double>>& emission,
                                         int window,
                                         const std::vector<double>& initial = {}) {
    const int k = static_cast<int>(transition.size());
    if (k < 1 || static_cast<int>(emission.size()) != k)
        throw std::invalid_argument("markov_window_joint: need one emission row per intent");
    const int symbols = static_cast<int>(emission.front().size());
    if (window < 1) throw std::invalid_argument("markov_window_joint: window must be >= 1");

    std::vector<double> init = initial.empty()
                                   ? std::vector<double>(static_cast<std::size_t>(k), 1.0 / k)
                                   : initial;

    DiscreteJoint j;
    j.dims.push_back(k);
    for (int w = 0; w < window; ++w) j.dims.push_back(symbols);
    j.p.assign(j.cell_count(), 0.0);

    // Enumerate intent paths (i_1..i_w) and signal tuples recursively.
    std::vector<int> path(static_cast<std::size_t>(window), 0);
    const std::function<void(int, double)> walk = [&](int depth, double prob) {
        if (prob == 0.0) return;
        if (depth == window) {
            // Distribute over all signal tuples for this intent path.
            std::vector<int> sig(static_cast<std::size_t>(window), 0);
            const std::function<void(int, double)> emit = [&](int d, double p) {
                if (d == window) {
                    std::size_t flat = static_cast<std::size_t>(path.back());
                    for (int w = 0; w < window; ++w)
                        flat = flat * static_cast<std::size_t>(symbols) +
                               static_cast<std::size_t>(sig[static_cast<std::size_t>(w)]);
                    j.p[flat] += p;
                    return;
                }
                const auto& row = emission[static_cast<std::size_t>(path[static_cast<std::size_t>(d)])];
                for (int s = 0; s < symbols; ++s) {
                    sig[static_cast<std::size_t>(d)] = s;
                    emit(d + 1, p * row[static_cast<std::size_t>(s)]);
                }
            };
            emit(0, prob);
            return;
        }
        for (int i = 0; i < k; ++i) {
            path[static_cast<std::size_t>(depth)] = i;
            const double step =
                (depth == 0) ? init[static_cast<std::size_t>(i)]
                             : transition[static_cast<std::size_t>(path[static_cast<std::size_t>(depth - 1)])]
                                         [static_cast<std::size_t>(i)];
            walk(depth + 1, prob * step);
        }
    };
    walk(0, 1.0);
    j.validate();
    return j;
}

// MI between the window-end intent and signal windows of growing length,
// derived from one exact joint by marginalizing the oldest symbols.
inline std::vector<double> mi_accumulation_bits(const DiscreteJoint& window_joint) {
    const int window = static_cast<int>(window_joint.dims.size()) - 1;
    std::vector<double> out;
    for (int w = 1; w <= window; ++w) {
        std::vector<int> keep{0};
        for (int a = window - w + 1; a <= window; ++a) keep.push_back(a);
        out.push_back(mutual_information_bits(window_joint.marginal(keep)));
    }
    return out;
}

enum class Modality { gaze, heart, context, eeg };

inline std::string modality_name(Modality m) {
    switch (m) {
        case Modality::gaze: return "gaze";
        case Modality::heart: return "heart";
        case Modality::context: return "context";
        case Modality::eeg: return "eeg";
    }
    return "?";
}

inline std::string subset_name(const std::vector<Modality>& subset) {
    std::string s;
    for (std::size_t i = 0; i < subset.size(); ++i) {
        if (i) s += '+';
        s += modality_name(subset[i]);
    }
    return s;
}

struct MiEstimate {
    double mi_bits = 0.0;
    double intent_entropy_bits = 0.0;  // plug-in H(intent) on the same samples
    double jackknife_bias_bits = 0.0;
    std::int64_t samples = 0;
    int bins = 0;
    bool sparse_warning = false;  // fewer samples per occupied cell than wanted
    std::string note;

    double conditional_entropy_bits() const { return intent_entropy_bits - mi_bits; }
};

namespace detail {

inline std::vector<double> equal_frequency_edges(std::vector<double> values, int bins) {
    std::sort(values.begin(), values.end());
    std::vector<double> edges;
    for (int b = 1; b < bins; ++b) {
        const std::size_t idx = static_cast<std::size_t>(
            static_cast<double>(values.size()) * b / bins);
        edges.push_back(values[std::min(idx, values.size() - 1)]);
    }
    return edges;
}

inline int bin_of(double x, const std::vector<double>& edges) {
    int b = 0;
    for (double e : edges) {
        if (x < e) break;
        ++b;
    }
    return b;
}

// Zero crossings of the bandpassed first EEG channel over a trailing window;
// for a tone at f Hz the count is ~2*f*window_seconds, so it separates
// per-intent frequencies.
inline std::vector<int> eeg_zero_cross_feature(const signals::EpisodeTrace& ep, int window) {
    const auto T = static_cast<std::size_t>(ep.ticks());
    std::vector<double> ch0(T);
    for (std::size_t t = 0; t < T; ++t) ch0[t] = ep.frames[t].eeg.empty() ? 0.0 : ep.frames[t].eeg[0];
    preprocess::FilterSpec fspec;
    fspec.sample_rate_hz = ep.config.master_rate_hz;
    std::vector<double> filtered =
        (static_cast<int>(T) > preprocess::design_bandpass(fspec).warmup_len())
            ? preprocess::bandpass(ch0, fspec)
            : ch0;
    std::vector<int> feat(T, 0);
    int crossings = 0;
    for (std::size_t t = 1; t < T; ++t) {
        if ((filtered[t - 1] < 0.0) != (filtered[t] < 0.0)) ++crossings;
        if (t >= static_cast<std::size_t>(window)) {
            const std::size_t drop = t - static_cast<std::size_t>(window) + 1;
            if ((filtered[drop - 1] < 0.0) != (filtered[drop] < 0.0)) --crossings;
        }
        feat[t] = crossings;
    }
    return feat;
}

}  // namespace detail

// Plug-in MI between the true intent and a binned feature summary of the
// chosen modalities, pooled over episodes. Feature tuples for nested subsets
// nest, so estimates are monotone in the subset by construction.
inline MiEstimate estimate_modalities_mi(const std::vector<signals::EpisodeTrace>& episodes,
                                         const std::vector<Modality>& subset, int bins,
                                         std::int64_t stride_ticks = 32) {
    if (episodes.empty()) throw std::invalid_argument("estimate_modalities_mi: no episodes");
    if (bins < 2) throw std::invalid_argument("estimate_modalities_mi: bins must be >= 2");
    if (subset.empty()) throw std::invalid_argument("estimate_modalities_mi: empty subset");

    const bool use_gaze = std::find(subset.begin(), subset.end(), Modality::gaze) != subset.end();
    const bool use_heart = std::find(subset.begin(), subset.end(), Modality::heart) != subset.end();
    const bool use_ctx = std::find(subset.begin(), subset.end(), Modality::context) != subset.end();
    const bool use_eeg = std::find(subset.begin(), subset.end(), Modality::eeg) != subset.end();

    // Gather raw feature values for bin-edge calibration.
    std::vector<double> gx, gy, hr, zc;
    std::vector<std::vector<int>> eeg_feats;
    for (const auto& ep : episodes) {
        if (use_eeg) {
            eeg_feats.push_back(detail::eeg_zero_cross_feature(
                ep, static_cast<int>(ep.config.master_rate_hz)));
        }
        for (std::int64_t t = 0; t < ep.ticks(); t += stride_ticks) {
            const auto& f = ep.frames[static_cast<std::size_t>(t)];
            if (use_gaze) { gx.push_back(f.gaze_x); gy.push_back(f.gaze_y); }
            if (use_heart) hr.push_back(f.heart);
            if (use_eeg)
                zc.push_back(static_cast<double>(
                    eeg_feats.back()[static_cast<std::size_t>(t)]));
        }
    }
    const auto ex = use_gaze ? detail::equal_frequency_edges(gx, bins) : std::vector<double>{};
    const auto ey = use_gaze ? detail::equal_frequency_edges(gy, bins) : std::vector<double>{};
    const auto eh = use_heart ? detail::equal_frequency_edges(hr, bins) : std::vector<double>{};
    const auto ez = use_eeg ? detail::equal_frequency_edges(zc, bins) : std::vector<double>{};

    detail::CountMap joint, marg_x, marg_y;
    std::int64_t n = 0;
    std::size_t ep_idx = 0;
    for (const auto& ep : episodes) {
        for (std::int64_t t = 0; t < ep.ticks(); t += stride_ticks) {
            const auto& f = ep.frames[static_cast<std::size_t>(t)];
            std::vector<int> feat;
            if (use_gaze) {
                feat.push_back(detail::bin_of(f.gaze_x, ex));
                feat.push_back(detail::bin_of(f.gaze_y, ey));
            }
            if (use_heart) feat.push_back(detail::bin_of(f.heart, eh));
            if (use_ctx) feat.push_back(f.context.location_id);
            if (use_eeg)
                feat.push_back(detail::bin_of(
                    static_cast<double>(eeg_feats[ep_idx][static_cast<std::size_t>(t)]), ez));

            const int intent = ep.intents[static_cast<std::size_t>(t)];
            std::vector<int> full = feat;
            full.insert(full.begin(), intent);
            ++joint[full];
            ++marg_y[feat];
            ++marg_x[std::vector<int>{intent}];
            ++n;
        }
        if (use_eeg) ++ep_idx;
    }

    MiEstimate est;
    est.samples = n;
    est.bins = bins;
    const double nd = static_cast<double>(n);
    const double hx = detail::entropy_from_counts(marg_x, nd);
    const double hy = detail::entropy_from_counts(marg_y, nd);
    const double hxy = detail::entropy_from_counts(joint, nd);
    est.mi_bits = hx + hy - hxy;
    est.intent_entropy_bits = hx;
    est.jackknife_bias_bits = detail::entropy_jackknife_bias(marg_x, nd) +
                              detail::entropy_jackknife_bias(marg_y, nd) -
                              detail::entropy_jackknife_bias(joint, nd);
    const double per_cell = nd / static_cast<double>(std::max<std::size_t>(joint.size(), 1));
    if (per_cell < 10.0) {
        est.sparse_warning = true;
        est.note = "fewer than 10 samples per occupied cell; confidence widened";
    }
    return est;
}

}  // namespace zia::info
