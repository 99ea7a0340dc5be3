#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "zia/attention.hpp"
#include "zia/autodiff.hpp"
#include "zia/common.hpp"
#include "zia/preprocess.hpp"
#include "zia/signals.hpp"
#include "zia/tensor.hpp"

namespace zia::fusion {

inline constexpr int kEmbeddingDim = 128;

enum class Modality { gaze, bio, context, fused };

inline std::string modality_tag(Modality m) {
    switch (m) {
        case Modality::gaze: return "gaze";
        case Modality::bio: return "bio";
        case Modality::context: return "context";
        case Modality::fused: return "fused";
    }
    return "?";
}

// Aligned 128-d embeddings over a time window. Timestamps are master-clock
// tick indices.
struct EmbeddingSequence {
    Tensor vectors;  // N x 128
    Modality modality = Modality::fused;
    std::vector<std::int64_t> timestamps;

    void validate() const {
        if (vectors.cols != kEmbeddingDim)
            throw std::invalid_argument("EmbeddingSequence: vectors must be 128-dimensional");
        if (static_cast<int>(timestamps.size()) != vectors.rows)
            throw std::invalid_argument("EmbeddingSequence: one timestamp per vector required");
    }
};

// ---------------------------------------------------------------------------
// Modality encoders: two-layer affine + tanh over a fixed feature window
// ---------------------------------------------------------------------------

struct EncoderParams {
    Tensor w1, b1;  // in x hidden, 1 x hidden
    Tensor w2, b2;  // hidden x 128, 1 x 128

    void validate() const {
        if (w2.cols != kEmbeddingDim)
            throw std::invalid_argument("EncoderParams: output dimension must be 128");
        for (const Tensor* t : {&w1, &b1, &w2, &b2})
            for (double x : t->v)
                if (!std::isfinite(x))
                    throw std::invalid_argument("EncoderParams: non-finite parameter");
    }
};

inline EncoderParams init_encoder(int in_dim, int hidden, rng::Stream& g) {
    EncoderParams p;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    p.w1 = random_uniform(in_dim, hidden, -s1, s1, g);
    p.b1 = Tensor::zeros(1, hidden);
    p.w2 = random_uniform(hidden, kEmbeddingDim, -s2, s2, g);
    p.b2 = Tensor::zeros(1, kEmbeddingDim);
    return p;
}

// One 128-d embedding per input window row; deterministic given params.
inline EmbeddingSequence encode_modality(const Tensor& windows, const EncoderParams& params,
                                         Modality modality,
                                         std::vector<std::int64_t> timestamps = {}) {
    if (windows.rows == 0) throw std::invalid_argument("encode_modality: empty stream");
    if (windows.cols != params.w1.rows)
        throw std::invalid_argument("encode_modality: feature width " +
                                    std::to_string(windows.cols) + " != encoder input " +
                                    std::to_string(params.w1.rows));
    params.validate();
    Tensor h = matmul(windows, params.w1);
    for (int i = 0; i < h.rows; ++i)
        for (int j = 0; j < h.cols; ++j) h(i, j) = std::tanh(h(i, j) + params.b1(0, j));
    Tensor z = matmul(h, params.w2);
    for (int i = 0; i < z.rows; ++i)
        for (int j = 0; j < z.cols; ++j) z(i, j) += params.b2(0, j);
    EmbeddingSequence seq;
    seq.vectors = std::move(z);
    seq.modality = modality;
    if (timestamps.empty()) {
        seq.timestamps.resize(static_cast<std::size_t>(windows.rows));
        for (int i = 0; i < windows.rows; ++i) seq.timestamps[static_cast<std::size_t>(i)] = i;
    } else {
        seq.timestamps = std::move(timestamps);
    }
    seq.validate();
    return seq;
}

// Tape version used in training.
inline ad::Value encode_modality_tape(ad::Tape& tape, ad::Value windows, ad::Value w1, ad::Value b1,
                                      ad::Value w2, ad::Value b2) {
    ad::Value h = tape.tanh_(tape.add_rowvec(tape.matmul(windows, w1), b1));
    return tape.add_rowvec(tape.matmul(h, w2), b2);
}

// ---------------------------------------------------------------------------
// Contrastive (InfoNCE) loss
// ---------------------------------------------------------------------------

// Mean over positive pairs (i,j) of -log softmax(<z_i, c_j>/tau), denominator
// over all candidates for anchor i. Embeddings are L2-normalized before the
// inner product.
inline double contrastive_loss(const Tensor& anchors, const Tensor& candidates,
                               const std::vector<std::pair<int, int>>& positive_pairs,
                               double tau = 0.1) {
    if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be > 0");
    if (positive_pairs.empty()) throw std::invalid_argument("contrastive_loss: no positive pairs");
    if (anchors.cols != candidates.cols)
        throw std::invalid_argument("contrastive_loss: dimension mismatch");

    const auto norm_row = [](const Tensor& t, int i, std::vector<double>& out) {
        double s = 0.0;
        for (int j = 0; j < t.cols; ++j) s += t(i, j) * t(i, j);
        const double nrm = std::max(std::sqrt(s), 1e-12);
        out.resize(static_cast<std::size_t>(t.cols));
        for (int j = 0; j < t.cols; ++j) out[static_cast<std::size_t>(j)] = t(i, j) / nrm;
    };

    std::vector<std::vector<double>> cand_norm(static_cast<std::size_t>(candidates.rows));
    for (int i = 0; i < candidates.rows; ++i) norm_row(candidates, i, cand_norm[static_cast<std::size_t>(i)]);

    double loss = 0.0;
    std::vector<double> a;
    for (const auto& [i, j] : positive_pairs) {
        if (i < 0 || i >= anchors.rows || j < 0 || j >= candidates.rows)
            throw std::invalid_argument("contrastive_loss: pair index out of range");
        norm_row(anchors, i, a);
        double mx = -1e300;
        std::vector<double> sims(static_cast<std::size_t>(candidates.rows));
        for (int k = 0; k < candidates.rows; ++k) {
            double dot = 0.0;
            for (int c = 0; c < anchors.cols; ++c)
                dot += a[static_cast<std::size_t>(c)] * cand_norm[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
            sims[static_cast<std::size_t>(k)] = dot / tau;
            mx = std::max(mx, sims[static_cast<std::size_t>(k)]);
        }
        double lse = 0.0;
        for (double s : sims) lse += std::exp(s - mx);
        lse = mx + std::log(lse);
        loss -= sims[static_cast<std::size_t>(j)] - lse;
    }
    return loss / static_cast<double>(positive_pairs.size());
}

// Tape version: same definition, differentiable w.r.t. both embedding sets.
inline ad::Value contrastive_loss_tape(ad::Tape& tape, ad::Value anchors, ad::Value candidates,
                                       const std::vector<std::pair<int, int>>& positive_pairs,
                                       double tau = 0.1) {
    if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be > 0");
    if (positive_pairs.empty()) throw std::invalid_argument("contrastive_loss: no positive pairs");
    ad::Value an = tape.row_l2_normalize(anchors);
    ad::Value cn = tape.row_l2_normalize(candidates);
    ad::Value sims = tape.scale(tape.matmul(an, tape.transpose(cn)), 1.0 / tau);
    ad::Value ls = tape.row_log_softmax(sims);
    // Select the positive column for each anchor that appears in a pair.
    std::vector<int> rows, cols;
    for (const auto& [i, j] : positive_pairs) { rows.push_back(i); cols.push_back(j); }
    ad::Value picked = tape.gather_rows(ls, rows);
    ad::Value pos = tape.pick_cols(picked, cols);
    return tape.scale(tape.sum_all(pos), -1.0 / static_cast<double>(positive_pairs.size()));
}

// ---------------------------------------------------------------------------
// Dynamic time warping
// ---------------------------------------------------------------------------

struct AlignmentResult {
    double cost = 0.0;
    std::vector<std::pair<int, int>> path;  // 1-based, (1,1) .. (N,M)
};

// Squared-Euclidean DTW with full backtracking. Ties prefer the diagonal,
// then the shorter-A step, so paths are deterministic.
inline AlignmentResult dtw_align(const Tensor& A, const Tensor& B) {
    if (A.rows == 0 || B.rows == 0) throw std::invalid_argument("dtw_align: empty sequence");
    if (A.cols != B.cols) throw std::invalid_argument("dtw_align: dimension mismatch");
    const int n = A.rows;
    const int m = B.rows;
    const double inf = std::numeric_limits<double>::infinity();

    const auto local = [&](int i, int j) {
        double s = 0.0;
        for (int c = 0; c < A.cols; ++c) {
            const double d = A(i, c) - B(j, c);
            s += d * d;
        }
        return s;
    };

    std::vector<double> D(static_cast<std::size_t>((n + 1) * (m + 1)), inf);
    const auto at = [m](int i, int j) { return static_cast<std::size_t>(i * (m + 1) + j); };
    D[at(0, 0)] = 0.0;
    for (int i = 1; i <= n; ++i)
        for (int j = 1; j <= m; ++j) {
            const double best = std::min({D[at(i - 1, j - 1)], D[at(i - 1, j)], D[at(i, j - 1)]});
            D[at(i, j)] = local(i - 1, j - 1) + best;
        }

    AlignmentResult res;
    res.cost = D[at(n, m)];
    int i = n, j = m;
    res.path.emplace_back(i, j);
    while (i > 1 || j > 1) {
        double diag = (i > 1 && j > 1) ? D[at(i - 1, j - 1)] : inf;
        double up = (i > 1) ? D[at(i - 1, j)] : inf;
        double left = (j > 1) ? D[at(i, j - 1)] : inf;
        if (diag <= up && diag <= left) { --i; --j; }
        else if (up <= left) { --i; }
        else { --j; }
        res.path.emplace_back(i, j);
    }
    std::reverse(res.path.begin(), res.path.end());
    return res;
}

inline AlignmentResult dtw_align(const EmbeddingSequence& A, const EmbeddingSequence& B) {
    A.validate();
    B.validate();
    return dtw_align(A.vectors, B.vectors);
}

// ---------------------------------------------------------------------------
// Attention-based alignment / fusion
// ---------------------------------------------------------------------------

// Cross-modal attention applied per master-clock tick: the three modality
// embeddings at tick i form the key/value set, the query is their mean. One
// fused 128-d vector per tick, each a convex mixture of the per-modality
// value projections (then output-projected). Uses the same softmax kernel as
// the predictor.
inline EmbeddingSequence attention_align(const EmbeddingSequence& zg, const EmbeddingSequence& zb,
                                         const EmbeddingSequence& zc,
                                         const attn::MultiHeadParams& params) {
    zg.validate();
    zb.validate();
    zc.validate();
    const int n = zg.vectors.rows;
    if (zb.vectors.rows != n || zc.vectors.rows != n)
        throw std::invalid_argument("attention_align: sequences must share the timeline");
    if (n == 0) throw std::invalid_argument("attention_align: empty sequences");

    const double scale = 1.0 / std::sqrt(static_cast<double>(kEmbeddingDim));
    EmbeddingSequence out;
    out.modality = Modality::fused;
    out.timestamps = zg.timestamps;
    out.vectors = Tensor(n, kEmbeddingDim);

    Tensor tokens(3, kEmbeddingDim);
    Tensor query(1, kEmbeddingDim);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < kEmbeddingDim; ++j) {
            tokens(0, j) = zg.vectors(i, j);
            tokens(1, j) = zb.vectors(i, j);
            tokens(2, j) = zc.vectors(i, j);
            query(0, j) = (tokens(0, j) + tokens(1, j) + tokens(2, j)) / 3.0;
        }
        Tensor q = matmul(query, params.wq);
        Tensor k = matmul(tokens, params.wk);
        Tensor v = matmul(tokens, params.wv);
        Tensor mixed = attn::softmax_attention(q, k, v, scale);
        Tensor fused = matmul(mixed, params.wo);
        for (int j = 0; j < kEmbeddingDim; ++j) out.vectors(i, j) = fused(0, j);
    }
    return out;
}

// Embeddings exportable for inspection: tick, modality, 128 columns.
inline void write_embeddings_csv(const std::vector<const EmbeddingSequence*>& sequences,
                                 std::ostream& os) {
    os << "tick,modality";
    for (int j = 0; j < kEmbeddingDim; ++j) os << ",e" << j;
    os << '\n';
    for (const EmbeddingSequence* seq : sequences) {
        for (int i = 0; i < seq->vectors.rows; ++i) {
            os << seq->timestamps[static_cast<std::size_t>(i)] << ',' << modality_tag(seq->modality);
            for (int j = 0; j < kEmbeddingDim; ++j) os << ',' << fmt_double(seq->vectors(i, j));
            os << '\n';
        }
    }
}

}  // namespace zia::fusion
