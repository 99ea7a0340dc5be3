#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "zia/common.hpp"
#include "zia/tensor.hpp"

namespace zia::edgecost {

// ---------------------------------------------------------------------------
// Hardware profiles
// ---------------------------------------------------------------------------

struct CostProfile {
    std::string name = "custom";
    double freq_hz = 1e9;
    double cycles_per_op = 1.0;
    double t_io_s = 0.01;
    double energy_per_op_j = 1e-9;

    void validate() const {
        if (!(freq_hz > 0 && cycles_per_op > 0 && t_io_s > 0 && energy_per_op_j > 0))
            throw ConfigError("CostProfile: all fields must be positive");
    }
};

inline std::vector<CostProfile> builtin_profiles() {
    return {
        CostProfile{"cpu", 2.84e9, 2.0, 0.010, 1.5e-9},
        CostProfile{"tpu", 4.00e9, 1.0, 0.010, 1.0e-9},
        CostProfile{"npu", 3.00e9, 2.0, 0.010, 1.2e-9},
    };
}

inline nlohmann::json profiles_to_json(const std::vector<CostProfile>& profiles) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& p : profiles) {
        j[p.name] = {{"freq_hz", p.freq_hz},
                     {"cycles_per_op", p.cycles_per_op},
                     {"t_io_s", p.t_io_s},
                     {"energy_per_op_j", p.energy_per_op_j}};
    }
    return j;
}

inline std::vector<CostProfile> profiles_from_json(const nlohmann::json& j) {
    std::vector<CostProfile> out;
    for (const auto& [name, body] : j.items()) {
        CostProfile p;
        p.name = name;
        p.freq_hz = body.at("freq_hz").get<double>();
        p.cycles_per_op = body.at("cycles_per_op").get<double>();
        p.t_io_s = body.at("t_io_s").get<double>();
        p.energy_per_op_j = body.at("energy_per_op_j").get<double>();
        p.validate();
        out.push_back(p);
    }
    std::sort(out.begin(), out.end(),
              [](const CostProfile& a, const CostProfile& b) { return a.name < b.name; });
    return out;
}

// ---------------------------------------------------------------------------
// Latency / power projections
// ---------------------------------------------------------------------------

// T_inf = n_ops * cycles_per_op / freq + t_io.
inline double latency_s(double n_ops, const CostProfile& p) {
    if (n_ops < 0) throw std::invalid_argument("latency_s: n_ops must be >= 0");
    p.validate();
    return n_ops * p.cycles_per_op / p.freq_hz + p.t_io_s;
}

// P = n_ops * E_op / T_inf.
inline double power_w(double n_ops, double energy_per_op_j, double t_inf_s) {
    if (!(t_inf_s > 0)) throw std::invalid_argument("power_w: t_inf must be > 0");
    if (n_ops < 0) throw std::invalid_argument("power_w: n_ops must be >= 0");
    return n_ops * energy_per_op_j / t_inf_s;
}

// ---------------------------------------------------------------------------
// Operation counting
// ---------------------------------------------------------------------------

enum class AttentionKind { softmax, linear };

inline std::string attention_kind_name(AttentionKind k) {
    return k == AttentionKind::softmax ? "softmax" : "linear";
}

// Counting convention (shared with the instrumented kernels, see
// attention.hpp): multiply-accumulates and bare multiplies count as 1 MAC
// slot; 1 MAC = 2 ops; exp/div/compare and pure additions are not counted;
// embedding lookups and layer norms are excluded.
struct OpCountBreakdown {
    std::uint64_t projections = 0;  // Q/K/V/output projections, all layers
    std::uint64_t attention = 0;    // score+mix (softmax) or feature-map+factored product (linear)
    std::uint64_t ffn = 0;
    std::uint64_t head = 0;         // classifier
    std::uint64_t total() const { return projections + attention + ffn + head; }
};

struct ModelDims {
    int layers = 6;
    int model_dim = 128;
    int heads = 8;
    int ffn_dim = 512;
    int sequence_len = 100;
    int intent_count = 10;
};

// MACs for one attention application over an N x d input, matching the
// kernel-level counters exactly.
inline std::uint64_t attention_macs(AttentionKind kind, std::uint64_t n, std::uint64_t d,
                                    std::uint64_t heads) {
    const std::uint64_t dh = d / heads;
    if (kind == AttentionKind::softmax) {
        // scores N*N*dh + scale N*N + mix N*N*dh, per head
        return heads * (n * n * dh + n * n + n * n * dh);
    }
    // phi on Q and K: 2*N*dh each; K^T V: N*dh*dh; Q (K^T V): N*dh*dh;
    // denominator dot products: N*dh, per head
    return heads * (4 * n * dh + 2 * n * dh * dh + n * dh);
}

inline OpCountBreakdown count_macs(const ModelDims& m, AttentionKind kind) {
    const std::uint64_t n = static_cast<std::uint64_t>(m.sequence_len);
    const std::uint64_t d = static_cast<std::uint64_t>(m.model_dim);
    const std::uint64_t f = static_cast<std::uint64_t>(m.ffn_dim);
    const std::uint64_t L = static_cast<std::uint64_t>(m.layers);
    OpCountBreakdown b;
    b.projections = L * 4 * n * d * d;
    b.attention = L * attention_macs(kind, n, d, static_cast<std::uint64_t>(m.heads));
    b.ffn = L * 2 * n * d * f;
    b.head = d * static_cast<std::uint64_t>(m.intent_count);
    return b;
}

// Total analytic operation count (1 MAC = 2 ops).
inline std::uint64_t count_ops(const ModelDims& m, AttentionKind kind) {
    return 2 * count_macs(m, kind).total();
}

// ---------------------------------------------------------------------------
// Quantization (signed 8-bit fixed point, scale 2^-7)
// ---------------------------------------------------------------------------

inline constexpr double kQuantScale = 0.0078125;  // 2^-7
inline constexpr int kQuantClamp = 127;

struct QuantizedTensor {
    int rows = 0;
    int cols = 0;
    std::vector<std::int8_t> codes;
    std::int64_t saturated = 0;  // values clamped to +-127

    Tensor dequantize() const {
        Tensor t(rows, cols);
        for (int i = 0; i < t.size(); ++i)
            t.v[static_cast<std::size_t>(i)] =
                static_cast<double>(codes[static_cast<std::size_t>(i)]) * kQuantScale;
        return t;
    }
};

// codes = round(w / 2^-7), clamped to [-127, 127]. Saturation is counted,
// never raised.
inline QuantizedTensor quantize(const Tensor& w) {
    QuantizedTensor q;
    q.rows = w.rows;
    q.cols = w.cols;
    q.codes.resize(static_cast<std::size_t>(w.size()));
    for (int i = 0; i < w.size(); ++i) {
        const double scaled = w.v[static_cast<std::size_t>(i)] / kQuantScale;
        long long code = std::llround(scaled);
        if (code > kQuantClamp) { code = kQuantClamp; ++q.saturated; }
        if (code < -kQuantClamp) { code = -kQuantClamp; ++q.saturated; }
        q.codes[static_cast<std::size_t>(i)] = static_cast<std::int8_t>(code);
    }
    return q;
}

// ---------------------------------------------------------------------------
// Magnitude pruning
// ---------------------------------------------------------------------------

struct PruneMask {
    std::vector<bool> keep;  // false = pruned
    double rho = 0.0;

    std::int64_t pruned_count() const {
        return static_cast<std::int64_t>(std::count(keep.begin(), keep.end(), false));
    }
};

// Zeroes exactly floor(rho * n) smallest-magnitude weights; ties broken by
// index order.
inline PruneMask prune(const Tensor& w, double rho) {
    if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("prune: rho must be in [0,1)");
    const int n = w.size();
    PruneMask mask;
    mask.rho = rho;
    mask.keep.assign(static_cast<std::size_t>(n), true);
    const int drop = static_cast<int>(std::floor(rho * n));
    if (drop == 0) return mask;
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double ma = std::abs(w.v[static_cast<std::size_t>(a)]);
        const double mb = std::abs(w.v[static_cast<std::size_t>(b)]);
        if (ma != mb) return ma < mb;
        return a < b;
    });
    for (int i = 0; i < drop; ++i) mask.keep[static_cast<std::size_t>(order[i])] = false;
    return mask;
}

// ---------------------------------------------------------------------------
// Whole-model compression
// ---------------------------------------------------------------------------

struct CompressionReport {
    double rho = 0.0;
    bool quantized = false;
    std::int64_t weights_total = 0;
    std::int64_t weights_pruned = 0;
    std::int64_t saturated = 0;
    double max_reconstruction_error = 0.0;
    double sparsity() const {
        return weights_total ? static_cast<double>(weights_pruned) / weights_total : 0.0;
    }
};

// Prunes each tensor at the same rho, then (optionally) round-trips the
// survivors through quantization. Downstream accuracy deltas are measured by
// the caller.
inline CompressionReport apply_compression(ParamSet& weights, double rho, bool quantize_flag) {
    CompressionReport rep;
    rep.rho = rho;
    rep.quantized = quantize_flag;
    for (auto& [name, w] : weights.entries) {
        rep.weights_total += w.size();
        if (rho > 0.0) {
            const PruneMask mask = prune(w, rho);
            for (int i = 0; i < w.size(); ++i)
                if (!mask.keep[static_cast<std::size_t>(i)]) w.v[static_cast<std::size_t>(i)] = 0.0;
            rep.weights_pruned += mask.pruned_count();
        }
        if (quantize_flag) {
            const QuantizedTensor q = quantize(w);
            rep.saturated += q.saturated;
            const Tensor back = q.dequantize();
            for (int i = 0; i < w.size(); ++i) {
                rep.max_reconstruction_error =
                    std::max(rep.max_reconstruction_error,
                             std::abs(w.v[static_cast<std::size_t>(i)] -
                                      back.v[static_cast<std::size_t>(i)]));
            }
            w = back;
        }
    }
    return rep;
}

}  // namespace zia::edgecost
