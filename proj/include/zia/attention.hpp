#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "zia/edgecost.hpp"
#include "zia/tensor.hpp"

namespace zia::attn {

// Counts multiply-accumulate slots during kernel execution. Convention
// matches edgecost::attention_macs: MACs and bare multiplies count 1,
// exp/div/compare and pure adds count 0.
struct OpCounter {
    std::uint64_t macs = 0;
};

// Row-stochastic scaled dot-product attention over single-head matrices.
// scale multiplies the raw scores (callers pass 1/sqrt(d_head) or the
// single-scale variant 1/sqrt(model_dim)).
inline Tensor softmax_attention(const Tensor& Q, const Tensor& K, const Tensor& V, double scale,
                                OpCounter* counter = nullptr, Tensor* weights_out = nullptr) {
    if (Q.cols != K.cols) throw std::invalid_argument("softmax_attention: Q/K dim mismatch");
    if (K.rows != V.rows) throw std::invalid_argument("softmax_attention: K/V row mismatch");
    const int n = Q.rows;
    const int m = K.rows;
    Tensor scores = matmul_nt(Q, K);
    for (auto& s : scores.v) s *= scale;
    if (counter != nullptr)
        counter->macs += static_cast<std::uint64_t>(n) * m * Q.cols +  // scores
                         static_cast<std::uint64_t>(n) * m;            // scaling
    for (int i = 0; i < n; ++i) {
        double mx = -1e300;
        for (int j = 0; j < m; ++j) mx = std::max(mx, scores(i, j));
        double sum = 0.0;
        for (int j = 0; j < m; ++j) {
            scores(i, j) = std::exp(scores(i, j) - mx);
            sum += scores(i, j);
        }
        for (int j = 0; j < m; ++j) scores(i, j) /= sum;
    }
    if (weights_out != nullptr) *weights_out = scores;
    Tensor out = matmul(scores, V);
    if (counter != nullptr) counter->macs += static_cast<std::uint64_t>(n) * m * V.cols;
    return out;
}

// Feature map phi(x) = exp(-||x||^2 / 2) * x, applied row-wise.
inline Tensor phi_feature(const Tensor& X, OpCounter* counter = nullptr) {
    Tensor out = X;
    for (int i = 0; i < X.rows; ++i) {
        double sq = 0.0;
        for (int j = 0; j < X.cols; ++j) sq += X(i, j) * X(i, j);
        const double w = std::exp(-0.5 * sq);
        for (int j = 0; j < X.cols; ++j) out(i, j) = w * X(i, j);
    }
    if (counter != nullptr)
        counter->macs += 2ull * static_cast<std::uint64_t>(X.rows) * X.cols;
    return out;
}

// Factored attention phi(Q)(phi(K)^T V) computed in O(N d^2). The literal
// form omits a normalizer; the default divides by phi(Q) . sum(phi(K)).
// The feature map is not positivity-preserving, so the denominator can be
// non-positive: such rows are flagged through denominator_warning, and rows
// whose denominator magnitude is below eps are emitted as zeros (this covers
// phi(q) = 0). Division by a negative denominator is kept as the literal
// formula value, which keeps the N=1 case equal to softmax attention.
inline Tensor linear_attention(const Tensor& Q, const Tensor& K, const Tensor& V,
                               bool normalized = true, OpCounter* counter = nullptr,
                               bool* denominator_warning = nullptr) {
    if (Q.cols != K.cols) throw std::invalid_argument("linear_attention: Q/K dim mismatch");
    if (K.rows != V.rows) throw std::invalid_argument("linear_attention: K/V row mismatch");
    const int n = Q.rows;
    const int m = K.rows;
    const int d = Q.cols;
    const Tensor phiQ = phi_feature(Q, counter);
    const Tensor phiK = phi_feature(K, counter);

    Tensor ktv = matmul_tn(phiK, V);  // d x dv
    if (counter != nullptr)
        counter->macs += static_cast<std::uint64_t>(m) * d * V.cols;
    Tensor out = matmul(phiQ, ktv);  // n x dv
    if (counter != nullptr)
        counter->macs += static_cast<std::uint64_t>(n) * d * V.cols;

    if (!normalized) return out;

    std::vector<double> ksum(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) ksum[static_cast<std::size_t>(j)] += phiK(i, j);
    constexpr double eps = 1e-12;
    for (int i = 0; i < n; ++i) {
        double denom = 0.0;
        for (int j = 0; j < d; ++j) denom += phiQ(i, j) * ksum[static_cast<std::size_t>(j)];
        if (counter != nullptr) counter->macs += static_cast<std::uint64_t>(d);
        if (denom <= eps && denominator_warning != nullptr) *denominator_warning = true;
        if (std::abs(denom) <= eps) {
            for (int j = 0; j < V.cols; ++j) out(i, j) = 0.0;
        } else {
            for (int j = 0; j < V.cols; ++j) out(i, j) /= denom;
        }
    }
    return out;
}

// Multi-head wrapper over the single-head kernels. X is N x d; weights are
// d x d projections. scale_full_dim restores the single 1/sqrt(d) scale in
// place of the per-head 1/sqrt(d/heads) convention.
struct MultiHeadParams {
    Tensor wq, wk, wv, wo;  // each d x d
};

inline Tensor multi_head_attention(const Tensor& X, const MultiHeadParams& p, int heads,
                                   edgecost::AttentionKind kind, bool scale_full_dim = false,
                                   OpCounter* counter = nullptr,
                                   bool* denominator_warning = nullptr) {
    const int d = X.cols;
    if (d % heads != 0)
        throw std::invalid_argument("multi_head_attention: dim not divisible by heads");
    const int dh = d / heads;
    Tensor Q = matmul(X, p.wq);
    Tensor K = matmul(X, p.wk);
    Tensor V = matmul(X, p.wv);
    if (counter != nullptr)
        counter->macs += 3ull * static_cast<std::uint64_t>(X.rows) * d * d;
    const double scale = 1.0 / std::sqrt(static_cast<double>(scale_full_dim ? d : dh));

    Tensor concat(X.rows, d);
    for (int h = 0; h < heads; ++h) {
        Tensor qh(X.rows, dh), kh(X.rows, dh), vh(X.rows, dh);
        for (int i = 0; i < X.rows; ++i)
            for (int j = 0; j < dh; ++j) {
                qh(i, j) = Q(i, h * dh + j);
                kh(i, j) = K(i, h * dh + j);
                vh(i, j) = V(i, h * dh + j);
            }
        Tensor oh;
        if (kind == edgecost::AttentionKind::softmax) {
            oh = softmax_attention(qh, kh, vh, scale, counter);
        } else {
            oh = linear_attention(qh, kh, vh, true, counter, denominator_warning);
        }
        for (int i = 0; i < X.rows; ++i)
            for (int j = 0; j < dh; ++j) concat(i, h * dh + j) = oh(i, j);
    }
    Tensor out = matmul(concat, p.wo);
    if (counter != nullptr)
        counter->macs += static_cast<std::uint64_t>(X.rows) * d * d;
    return out;
}

}  // namespace zia::attn
