#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "zia/adapt.hpp"
#include "zia/autodiff.hpp"
#include "zia/common.hpp"
#include "zia/fusion.hpp"
#include "zia/predictor.hpp"
#include "zia/preprocess.hpp"
#include "zia/signals.hpp"

namespace zia::pipeline {

// ---------------------------------------------------------------------------
// Episode preprocessing (the per-modality pipeline applied to a full episode)
// ---------------------------------------------------------------------------

struct PreprocessOptions {
    double gaze_ema_alpha = 0.9;
    double gaze_clip_k = 3.0;
    double heart_ema_alpha = 0.9;
    // Outlier clipping targets gaze saccades; the other modalities keep their
    // raw excursions unless switched on.
    bool clip_heart = false;
    bool clip_eeg = false;
    bool apply_ica = true;
    preprocess::FilterSpec eeg_filter;
};

struct PreparedEpisode {
    // Fresh-sample series after smoothing/clipping, with their tick indices.
    std::vector<std::int64_t> gaze_ticks;
    std::vector<double> gaze_x, gaze_y;
    std::vector<std::int64_t> heart_ticks;
    std::vector<double> heart;
    Tensor eeg;  // channels x ticks, bandpassed (and ICA-cleaned)
    const signals::EpisodeTrace* trace = nullptr;
    bool ica_warning = false;
};

inline PreparedEpisode prepare_episode(const signals::EpisodeTrace& ep,
                                       const PreprocessOptions& opt = {}) {
    PreparedEpisode out;
    out.trace = &ep;
    const auto T = static_cast<std::size_t>(ep.ticks());

    std::vector<double> gx, gy, hr;
    for (std::size_t t = 0; t < T; ++t) {
        const auto& f = ep.frames[t];
        if (f.fresh_gaze) {
            out.gaze_ticks.push_back(f.t);
            gx.push_back(f.gaze_x);
            gy.push_back(f.gaze_y);
        }
        if (f.fresh_heart) {
            out.heart_ticks.push_back(f.t);
            hr.push_back(f.heart);
        }
    }
    const double gaze_scale =
        ep.config.noise.gaze > 0.0 ? ep.config.noise.gaze : 1.0;
    out.gaze_x = preprocess::clip_outliers(preprocess::ema_smooth(gx, opt.gaze_ema_alpha),
                                           gaze_scale, opt.gaze_clip_k);
    out.gaze_y = preprocess::clip_outliers(preprocess::ema_smooth(gy, opt.gaze_ema_alpha),
                                           gaze_scale, opt.gaze_clip_k);
    out.heart = preprocess::ema_smooth(hr, opt.heart_ema_alpha);
    if (opt.clip_heart && ep.config.noise.heart > 0.0)
        out.heart = preprocess::clip_outliers(out.heart, ep.config.noise.heart, opt.gaze_clip_k);

    const int k = ep.config.eeg_channels;
    out.eeg = Tensor(k, static_cast<int>(T));
    preprocess::FilterSpec fs = opt.eeg_filter;
    fs.sample_rate_hz = ep.config.master_rate_hz;
    const bool can_filter =
        static_cast<int>(T) > preprocess::design_bandpass(fs).warmup_len();
    std::vector<double> ch(T);
    for (int c = 0; c < k; ++c) {
        for (std::size_t t = 0; t < T; ++t) ch[t] = ep.frames[t].eeg[static_cast<std::size_t>(c)];
        std::vector<double> filtered = can_filter ? preprocess::bandpass(ch, fs) : ch;
        if (opt.clip_eeg && ep.config.noise.eeg > 0.0)
            filtered = preprocess::clip_outliers(filtered, ep.config.noise.eeg, opt.gaze_clip_k);
        for (std::size_t t = 0; t < T; ++t) out.eeg(c, static_cast<int>(t)) = filtered[t];
    }
    if (opt.apply_ica && static_cast<long>(T) >= 10L * k) {
        const auto ica = preprocess::ica_clean(out.eeg);
        out.ica_warning = ica.warning;
        if (!ica.warning) out.eeg = ica.cleaned;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feature windows
// ---------------------------------------------------------------------------

// Config-derived input scaling (no data-dependent statistics).
struct FeatureScaling {
    double gaze_cx = 0.0, gaze_cy = 0.0, gaze_scale = 1.0;
    double heart_center = 0.0, heart_scale = 1.0;
    double eeg_scale = 1.0;

    static FeatureScaling from_scenario(const signals::ScenarioConfig& sc) {
        FeatureScaling s;
        double sx = 0, sy = 0, sh = 0, se = 0;
        for (const auto& t : sc.templates) {
            sx += t.gaze_x;
            sy += t.gaze_y;
            sh += t.heart_bpm;
            se += t.eeg_amp_uv;
        }
        const double n = static_cast<double>(sc.templates.size());
        s.gaze_cx = sx / n;
        s.gaze_cy = sy / n;
        s.heart_center = sh / n;
        s.eeg_scale = std::max(se / n, 1.0);
        double rad = 1.0, hspan = 1.0;
        for (const auto& t : sc.templates) {
            rad = std::max(rad, std::hypot(t.gaze_x - s.gaze_cx, t.gaze_y - s.gaze_cy));
            hspan = std::max(hspan, std::abs(t.heart_bpm - s.heart_center));
        }
        s.gaze_scale = rad;
        s.heart_scale = hspan;
        return s;
    }
};

struct FeatureDims {
    int gaze_window = 6;   // fresh gaze samples
    int heart_window = 4;  // 1-per-second lookback values
    int eeg_window_ticks = 256;
    int eeg_stride = 4;
    int time_dims = 32;

    int gaze_dim() const { return 2 * gaze_window; }
    int bio_dim(int eeg_channels) const {
        return heart_window + eeg_channels * (eeg_window_ticks / eeg_stride);
    }
    int ctx_dim(const signals::ContextModel& ctx) const {
        return time_dims + ctx.location_vocab + ctx.usage_vocab;
    }
    std::int64_t warmup_ticks() const { return eeg_window_ticks; }
};

namespace detail {
inline std::size_t last_index_leq(const std::vector<std::int64_t>& ticks, std::int64_t t) {
    const auto it = std::upper_bound(ticks.begin(), ticks.end(), t);
    return it == ticks.begin() ? 0 : static_cast<std::size_t>(it - ticks.begin() - 1);
}
}  // namespace detail

// Trailing-window features at master tick t for each modality.
struct FeatureBuilder {
    const PreparedEpisode* ep = nullptr;
    FeatureScaling scaling;
    FeatureDims dims;

    void gaze_features(std::int64_t t, double* out) const {
        const auto last = detail::last_index_leq(ep->gaze_ticks, t);
        for (int w = 0; w < dims.gaze_window; ++w) {
            const std::size_t idx =
                (last >= static_cast<std::size_t>(w)) ? last - static_cast<std::size_t>(w) : 0;
            out[2 * w] = (ep->gaze_x[idx] - scaling.gaze_cx) / scaling.gaze_scale;
            out[2 * w + 1] = (ep->gaze_y[idx] - scaling.gaze_cy) / scaling.gaze_scale;
        }
    }

    void bio_features(std::int64_t t, double* out) const {
        const auto& sc = ep->trace->config;
        const auto spacing = static_cast<std::int64_t>(sc.master_rate_hz / sc.rates.heart);
        for (int w = 0; w < dims.heart_window; ++w) {
            const std::int64_t tw = std::max<std::int64_t>(0, t - spacing * w);
            const auto idx = detail::last_index_leq(ep->heart_ticks, tw);
            out[w] = (ep->heart[idx] - scaling.heart_center) / scaling.heart_scale;
        }
        const int k = sc.eeg_channels;
        const int per_ch = dims.eeg_window_ticks / dims.eeg_stride;
        int o = dims.heart_window;
        for (int c = 0; c < k; ++c)
            for (int w = 0; w < per_ch; ++w) {
                const std::int64_t tw =
                    std::max<std::int64_t>(0, t - static_cast<std::int64_t>(dims.eeg_stride) *
                                                      (per_ch - 1 - w));
                out[o++] = ep->eeg(c, static_cast<int>(tw)) / scaling.eeg_scale;
            }
    }

    void ctx_features(std::int64_t t, double* out) const {
        const auto& sc = ep->trace->config;
        const auto& f = ep->trace->frames[static_cast<std::size_t>(t)];
        const auto enc = preprocess::encode_time(f.context.time_index, dims.time_dims);
        int o = 0;
        for (double v : enc.values) out[o++] = v;
        for (int i = 0; i < sc.context.location_vocab; ++i)
            out[o++] = (i == f.context.location_id) ? 1.0 : 0.0;
        for (int i = 0; i < sc.context.usage_vocab; ++i)
            out[o++] = (i == f.context.usage_id) ? 1.0 : 0.0;
    }
};

// ---------------------------------------------------------------------------
// Window dataset over the embedding grid
// ---------------------------------------------------------------------------

struct EmbeddingGrid {
    int episode = 0;
    std::vector<std::int64_t> ticks;  // master ticks carrying one embedding each
};

struct Window {
    int episode = 0;
    int end_grid_idx = 0;   // index into the episode's grid
    int length = 0;
    int label = 0;          // intent at the window-end tick
};

struct WindowDataset {
    std::vector<EmbeddingGrid> grids;  // one per episode
    std::vector<Window> train;
    std::vector<Window> test;
};

inline WindowDataset build_windows(const std::vector<signals::EpisodeTrace>& episodes,
                                   const FeatureDims& dims, std::int64_t stride_ticks,
                                   int window_len, double test_fraction, int subsample = 1) {
    WindowDataset ds;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const auto& ep = episodes[e];
        EmbeddingGrid grid;
        grid.episode = static_cast<int>(e);
        for (std::int64_t t = dims.warmup_ticks(); t < ep.ticks(); t += stride_ticks)
            grid.ticks.push_back(t);
        const int n = static_cast<int>(grid.ticks.size());
        // Time-ordered split with a one-window gap so train and test windows
        // never share embedding ticks.
        const int test_start = static_cast<int>(std::floor(n * (1.0 - test_fraction)));
        for (int i = window_len - 1; i < n; i += subsample) {
            Window w;
            w.episode = static_cast<int>(e);
            w.end_grid_idx = i;
            w.length = window_len;
            w.label = ep.intents[static_cast<std::size_t>(
                grid.ticks[static_cast<std::size_t>(i)])];
            if (i < test_start) ds.train.push_back(w);
            else if (i - window_len + 1 >= test_start) ds.test.push_back(w);
        }
        ds.grids.push_back(std::move(grid));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Pipeline model: encoders + fusion + transformer in one parameter set
// ---------------------------------------------------------------------------

enum class FusionKind { attention, dtw_average, single_modality };

inline std::string fusion_kind_name(FusionKind k) {
    switch (k) {
        case FusionKind::attention: return "attention";
        case FusionKind::dtw_average: return "dtw";
        case FusionKind::single_modality: return "single";
    }
    return "?";
}

struct PipelineSpec {
    bool use_gaze = true;
    bool use_bio = true;
    bool use_ctx = true;
    FusionKind fusion = FusionKind::attention;
    predictor::TransformerConfig tf;
    int encoder_hidden = 64;
    FeatureDims dims;

    int active_modalities() const {
        return (use_gaze ? 1 : 0) + (use_bio ? 1 : 0) + (use_ctx ? 1 : 0);
    }

    std::string subset_label() const {
        std::string s;
        if (use_gaze) s += "gaze";
        if (use_bio) s += (s.empty() ? "" : "+") + std::string("bio");
        if (use_ctx) s += (s.empty() ? "" : "+") + std::string("context");
        return s;
    }
};

struct PipelineModel {
    PipelineSpec spec;
    ParamSet params;  // enc.gaze.*, enc.bio.*, enc.ctx.*, fusion.*, tf.*
};

inline PipelineModel init_pipeline(const PipelineSpec& spec, const signals::ScenarioConfig& sc,
                                   std::uint64_t seed) {
    spec.tf.validate();
    if (spec.active_modalities() < 1)
        throw ConfigError("init_pipeline: at least one modality required");
    if (spec.fusion != FusionKind::single_modality && spec.active_modalities() < 3)
        throw ConfigError("init_pipeline: attention/dtw fusion needs all three modalities");
    rng::Stream g(seed, "init");
    PipelineModel m;
    m.spec = spec;
    const int H = spec.encoder_hidden;
    const auto add_encoder = [&](const std::string& name, int in_dim) {
        const fusion::EncoderParams e = fusion::init_encoder(in_dim, H, g);
        m.params.add("enc." + name + ".w1", e.w1);
        m.params.add("enc." + name + ".b1", e.b1);
        m.params.add("enc." + name + ".w2", e.w2);
        m.params.add("enc." + name + ".b2", e.b2);
    };
    if (spec.use_gaze) add_encoder("gaze", spec.dims.gaze_dim());
    if (spec.use_bio) add_encoder("bio", spec.dims.bio_dim(sc.eeg_channels));
    if (spec.use_ctx) add_encoder("ctx", spec.dims.ctx_dim(sc.context));
    if (spec.fusion == FusionKind::attention) {
        const double s = 1.0 / std::sqrt(static_cast<double>(fusion::kEmbeddingDim));
        for (const char* n : {"wq", "wk", "wv", "wo"})
            m.params.add(std::string("fusion.") + n,
                         random_uniform(fusion::kEmbeddingDim, fusion::kEmbeddingDim, -s, s, g));
    }
    ParamSet tf = predictor::init_transformer_weights(spec.tf, g);
    for (auto& [name, t] : tf.entries) m.params.add("tf." + name, std::move(t));
    return m;
}

inline fusion::EncoderParams encoder_view(const ParamSet& p, const std::string& name) {
    fusion::EncoderParams e;
    e.w1 = p.at("enc." + name + ".w1");
    e.b1 = p.at("enc." + name + ".b1");
    e.w2 = p.at("enc." + name + ".w2");
    e.b2 = p.at("enc." + name + ".b2");
    return e;
}

inline attn::MultiHeadParams fusion_view(const ParamSet& p) {
    attn::MultiHeadParams f;
    f.wq = p.at("fusion.wq");
    f.wk = p.at("fusion.wk");
    f.wv = p.at("fusion.wv");
    f.wo = p.at("fusion.wo");
    return f;
}

// TapeParams view with a name prefix stripped (the transformer builder uses
// unprefixed names).
inline predictor::TapeParams strip_prefix(const predictor::TapeParams& tp,
                                          const std::string& prefix) {
    predictor::TapeParams out;
    for (const auto& [name, v] : tp.ordered) {
        if (name.rfind(prefix, 0) == 0) {
            const std::string stripped = name.substr(prefix.size());
            out.by_name.emplace(stripped, v);
            out.ordered.emplace_back(stripped, v);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batched fused-embedding computation
// ---------------------------------------------------------------------------

struct BatchFeatures {
    // Unique (episode, grid index) pairs used by the batch, in sorted order.
    std::vector<std::pair<int, int>> unique;
    Tensor gaze, bio, ctx;  // feature rows per unique tick (active ones only)
    std::map<std::pair<int, int>, int> index_of;
};

inline BatchFeatures gather_features(const std::vector<Window>& batch,
                                     const WindowDataset& ds,
                                     const std::vector<PreparedEpisode>& prepared,
                                     const PipelineSpec& spec, const FeatureScaling& scaling) {
    BatchFeatures bf;
    for (const Window& w : batch)
        for (int i = 0; i < w.length; ++i)
            bf.unique.emplace_back(w.episode, w.end_grid_idx - w.length + 1 + i);
    std::sort(bf.unique.begin(), bf.unique.end());
    bf.unique.erase(std::unique(bf.unique.begin(), bf.unique.end()), bf.unique.end());
    for (std::size_t i = 0; i < bf.unique.size(); ++i)
        bf.index_of[bf.unique[i]] = static_cast<int>(i);

    const int U = static_cast<int>(bf.unique.size());
    const auto& any_sc = prepared.front().trace->config;
    if (spec.use_gaze) bf.gaze = Tensor(U, spec.dims.gaze_dim());
    if (spec.use_bio) bf.bio = Tensor(U, spec.dims.bio_dim(any_sc.eeg_channels));
    if (spec.use_ctx) bf.ctx = Tensor(U, spec.dims.ctx_dim(any_sc.context));
    for (int i = 0; i < U; ++i) {
        const auto [e, gi] = bf.unique[static_cast<std::size_t>(i)];
        FeatureBuilder fb{&prepared[static_cast<std::size_t>(e)], scaling, spec.dims};
        const std::int64_t t =
            ds.grids[static_cast<std::size_t>(e)].ticks[static_cast<std::size_t>(gi)];
        if (spec.use_gaze) fb.gaze_features(t, &bf.gaze.v[static_cast<std::size_t>(i) *
                                                          static_cast<std::size_t>(bf.gaze.cols)]);
        if (spec.use_bio) fb.bio_features(t, &bf.bio.v[static_cast<std::size_t>(i) *
                                                       static_cast<std::size_t>(bf.bio.cols)]);
        if (spec.use_ctx) fb.ctx_features(t, &bf.ctx.v[static_cast<std::size_t>(i) *
                                                       static_cast<std::size_t>(bf.ctx.cols)]);
    }
    return bf;
}

struct TapeEmbeddings {
    ad::Value gaze, bio, ctx;   // U x 128 (active modalities only)
    ad::Value fused;            // U x 128 for attention/single fusion
    bool has_fused = false;
};

// Per-tick cross-modal attention, batched over all unique ticks: the query is
// the token mean, scores are row-wise dot products against each modality's
// key projection.
inline ad::Value fused_by_attention(ad::Tape& tape, const predictor::TapeParams& tp, ad::Value zg,
                                    ad::Value zb, ad::Value zc) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(fusion::kEmbeddingDim));
    ad::Value wq = tp.at("fusion.wq");
    ad::Value wk = tp.at("fusion.wk");
    ad::Value wv = tp.at("fusion.wv");
    ad::Value wo = tp.at("fusion.wo");
    ad::Value mean = tape.scale(tape.add(tape.add(zg, zb), zc), 1.0 / 3.0);
    ad::Value q = tape.matmul(mean, wq);
    ad::Value kg = tape.matmul(zg, wk);
    ad::Value kb = tape.matmul(zb, wk);
    ad::Value kc = tape.matmul(zc, wk);
    ad::Value vg = tape.matmul(zg, wv);
    ad::Value vb = tape.matmul(zb, wv);
    ad::Value vc = tape.matmul(zc, wv);
    ad::Value sg = tape.scale(tape.row_sum(tape.mul(q, kg)), scale);
    ad::Value sb = tape.scale(tape.row_sum(tape.mul(q, kb)), scale);
    ad::Value sc_ = tape.scale(tape.row_sum(tape.mul(q, kc)), scale);
    ad::Value scores = tape.concat_cols({sg, sb, sc_});  // U x 3
    ad::Value a = tape.row_softmax(scores);
    ad::Value mixed = tape.add(
        tape.add(tape.mul_colvec(vg, tape.slice_cols(a, 0, 1)),
                 tape.mul_colvec(vb, tape.slice_cols(a, 1, 2))),
        tape.mul_colvec(vc, tape.slice_cols(a, 2, 3)));
    return tape.matmul(mixed, wo);
}

inline TapeEmbeddings embed_batch(ad::Tape& tape, const predictor::TapeParams& tp,
                                  const BatchFeatures& bf, const PipelineSpec& spec) {
    TapeEmbeddings te;
    const auto encode = [&](const Tensor& feats, const std::string& name) {
        return fusion::encode_modality_tape(tape, tape.constant(feats), tp.at("enc." + name + ".w1"),
                                            tp.at("enc." + name + ".b1"),
                                            tp.at("enc." + name + ".w2"),
                                            tp.at("enc." + name + ".b2"));
    };
    if (spec.use_gaze) te.gaze = encode(bf.gaze, "gaze");
    if (spec.use_bio) te.bio = encode(bf.bio, "bio");
    if (spec.use_ctx) te.ctx = encode(bf.ctx, "ctx");
    if (spec.fusion == FusionKind::attention) {
        te.fused = fused_by_attention(tape, tp, te.gaze, te.bio, te.ctx);
        te.has_fused = true;
    } else if (spec.fusion == FusionKind::single_modality) {
        te.fused = spec.use_gaze ? te.gaze : (spec.use_bio ? te.bio : te.ctx);
        te.has_fused = true;
    }
    return te;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainParams {
    int steps = 500;
    int batch = 24;
    double lr = 0.08;
    double beta_kl = 1e-3;
    double contrastive_weight = 0.1;
    double contrastive_tau = 0.1;
    int contrastive_max_ticks = 96;
    std::uint64_t seed = 0;
};

struct TrainStats {
    std::vector<double> loss_curve;     // CE+aux loss per logged step
    double final_train_ce = 0.0;
    bool denominator_warning = false;
};

namespace detail {

inline ad::Value kl_term(ad::Tape& tape, const predictor::TapeParams& tp) {
    // sum over head.w/head.b of (mu^2 + sigma^2 - 1)/2 - log sigma.
    const auto half = [&](ad::Value mu, ad::Value rho) {
        ad::Value sig = tape.softplus(rho);
        ad::Value t = tape.scale(
            tape.add_scalar(tape.add(tape.mul(mu, mu), tape.mul(sig, sig)), -1.0), 0.5);
        return tape.sum_all(tape.sub(t, tape.log_(sig)));
    };
    return tape.add(half(tp.at("tf.head.w"), tp.at("tf.head.w_rho")),
                    half(tp.at("tf.head.b"), tp.at("tf.head.b_rho")));
}

// Sampled classifier weights mu + softplus(rho) .* eps.
inline std::pair<ad::Value, ad::Value> sampled_head(ad::Tape& tape,
                                                    const predictor::TapeParams& tp,
                                                    const Tensor& eps_w, const Tensor& eps_b) {
    ad::Value sw = tape.softplus(tp.at("tf.head.w_rho"));
    ad::Value sb = tape.softplus(tp.at("tf.head.b_rho"));
    ad::Value hw = tape.add(tp.at("tf.head.w"), tape.mul(sw, tape.constant(eps_w)));
    ad::Value hb = tape.add(tp.at("tf.head.b"), tape.mul(sb, tape.constant(eps_b)));
    return {hw, hb};
}

inline std::vector<int> window_grid_rows(const Window& w, const BatchFeatures& bf) {
    std::vector<int> rows;
    for (int i = 0; i < w.length; ++i)
        rows.push_back(bf.index_of.at({w.episode, w.end_grid_idx - w.length + 1 + i}));
    return rows;
}

// DTW fusion rule: align the gaze and bio embedding sequences of the window,
// map each gaze step to its last matched bio step, average with the context
// embedding. The path is data (recomputed per batch), the averaging is
// differentiable.
inline std::vector<int> dtw_bio_match(const Tensor& zg_win, const Tensor& zb_win) {
    const fusion::AlignmentResult res = fusion::dtw_align(zg_win, zb_win);
    std::vector<int> match(static_cast<std::size_t>(zg_win.rows), 0);
    for (const auto& [i, j] : res.path) match[static_cast<std::size_t>(i - 1)] = j - 1;
    return match;
}

}  // namespace detail

// One training step of the joint objective: cross-entropy over windows +
// contrastive alignment over same-tick modality pairs + beta * KL of the
// variational head (sampled by reparameterization). Plain SGD with fixed lr.
inline double train_step(PipelineModel& model, const WindowDataset& ds,
                         const std::vector<PreparedEpisode>& prepared,
                         const FeatureScaling& scaling, const std::vector<Window>& batch,
                         const TrainParams& hp, rng::Stream& mc, bool* denom_warning = nullptr) {
    const PipelineSpec& spec = model.spec;
    BatchFeatures bf = gather_features(batch, ds, prepared, spec, scaling);

    ad::Tape tape;
    predictor::TapeParams tp = predictor::TapeParams::push_all(tape, model.params);
    TapeEmbeddings te = embed_batch(tape, tp, bf, spec);

    // Per-window transformer forwards over gathered fused rows.
    const predictor::TapeParams tf_view = strip_prefix(tp, "tf.");
    const int ic = spec.tf.intent_count;
    Tensor eps_w = random_normal(spec.tf.model_dim, ic, 1.0, mc);
    Tensor eps_b = random_normal(1, ic, 1.0, mc);
    auto [head_w, head_b] = detail::sampled_head(tape, tp, eps_w, eps_b);

    std::vector<ad::Value> logits_rows;
    std::vector<int> labels;
    bool warn = false;
    for (const Window& w : batch) {
        const std::vector<int> rows = detail::window_grid_rows(w, bf);
        ad::Value win;
        if (spec.fusion == FusionKind::dtw_average) {
            ad::Value zg_win = tape.gather_rows(te.gaze, rows);
            ad::Value zb_win = tape.gather_rows(te.bio, rows);
            ad::Value zc_win = tape.gather_rows(te.ctx, rows);
            const std::vector<int> match =
                detail::dtw_bio_match(tape.val(zg_win), tape.val(zb_win));
            ad::Value zb_matched = tape.gather_rows(zb_win, match);
            win = tape.scale(tape.add(tape.add(zg_win, zb_matched), zc_win), 1.0 / 3.0);
        } else {
            win = tape.gather_rows(te.fused, rows);
        }
        predictor::ForwardResult fw =
            predictor::build_forward(tape, win, spec.tf, tf_view, head_w, head_b);
        warn = warn || fw.denominator_warning;
        logits_rows.push_back(fw.logits);
        labels.push_back(w.label);
    }
    ad::Value logits = tape.concat_rows(logits_rows);
    ad::Value ce = tape.pick_nll(tape.row_log_softmax(logits), labels);

    ad::Value loss = ce;
    if (spec.active_modalities() >= 2 && hp.contrastive_weight > 0.0) {
        const int U = static_cast<int>(bf.unique.size());
        const int C = std::min(U, hp.contrastive_max_ticks);
        std::vector<std::pair<int, int>> pairs;
        for (int i = 0; i < C; ++i) pairs.emplace_back(i, i);
        std::vector<int> first_rows(static_cast<std::size_t>(C));
        std::iota(first_rows.begin(), first_rows.end(), 0);
        const auto head_of = [&](ad::Value z) { return tape.gather_rows(z, first_rows); };
        std::vector<ad::Value> zs;
        if (spec.use_gaze) zs.push_back(head_of(te.gaze));
        if (spec.use_bio) zs.push_back(head_of(te.bio));
        if (spec.use_ctx) zs.push_back(head_of(te.ctx));
        ad::Value contrast{};
        int terms = 0;
        for (std::size_t a = 0; a < zs.size(); ++a)
            for (std::size_t b = a + 1; b < zs.size(); ++b) {
                ad::Value term =
                    fusion::contrastive_loss_tape(tape, zs[a], zs[b], pairs, hp.contrastive_tau);
                contrast = (terms == 0) ? term : tape.add(contrast, term);
                ++terms;
            }
        loss = tape.add(loss, tape.scale(contrast, hp.contrastive_weight / terms));
    }
    if (hp.beta_kl > 0.0) loss = tape.add(loss, tape.scale(detail::kl_term(tape, tp), hp.beta_kl));

    tape.backward(loss);
    for (auto& [name, v] : tp.ordered) {
        Tensor& t = model.params.at(name);
        axpy(-hp.lr, tape.grad(v), t);
    }
    if (denom_warning != nullptr) *denom_warning = *denom_warning || warn;
    return tape.val(ce)(0, 0);
}

inline TrainStats train_pipeline(PipelineModel& model, const WindowDataset& ds,
                                 const std::vector<PreparedEpisode>& prepared,
                                 const FeatureScaling& scaling, const TrainParams& hp) {
    if (ds.train.empty()) throw ConfigError("train_pipeline: no training windows");
    TrainStats stats;
    rng::Stream pick(hp.seed, "train/batch");
    rng::Stream mc(hp.seed, "train/mc");
    for (int step = 0; step < hp.steps; ++step) {
        std::vector<Window> batch;
        for (int b = 0; b < hp.batch; ++b)
            batch.push_back(ds.train[static_cast<std::size_t>(
                pick.uniform_int(static_cast<int>(ds.train.size())))]);
        const double ce = train_step(model, ds, prepared, scaling, batch, hp, mc,
                                     &stats.denominator_warning);
        if (step % 25 == 0 || step + 1 == hp.steps) stats.loss_curve.push_back(ce);
        stats.final_train_ce = ce;
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Evaluation (pure forward, mean classifier weights)
// ---------------------------------------------------------------------------

struct PredictionRow {
    std::int64_t tick = 0;
    int true_intent = 0;
    int argmax_intent = 0;
    std::vector<double> probs;
};

struct EvalResult {
    double accuracy = 0.0;
    double mean_ce = 0.0;
    int count = 0;
    std::vector<PredictionRow> predictions;
};

inline EvalResult evaluate_pipeline(const PipelineModel& model, const WindowDataset& ds,
                                    const std::vector<PreparedEpisode>& prepared,
                                    const FeatureScaling& scaling,
                                    const std::vector<Window>& windows,
                                    bool keep_predictions = false) {
    const PipelineSpec& spec = model.spec;
    EvalResult res;
    if (windows.empty()) return res;

    BatchFeatures bf = gather_features(windows, ds, prepared, spec, scaling);
    // Pure encoder forwards over the unique ticks.
    Tensor zg, zb, zc;
    if (spec.use_gaze)
        zg = fusion::encode_modality(bf.gaze, encoder_view(model.params, "gaze"),
                                     fusion::Modality::gaze).vectors;
    if (spec.use_bio)
        zb = fusion::encode_modality(bf.bio, encoder_view(model.params, "bio"),
                                     fusion::Modality::bio).vectors;
    if (spec.use_ctx)
        zc = fusion::encode_modality(bf.ctx, encoder_view(model.params, "ctx"),
                                     fusion::Modality::context).vectors;

    Tensor fused;
    if (spec.fusion == FusionKind::attention) {
        fusion::EmbeddingSequence eg{zg, fusion::Modality::gaze, {}};
        fusion::EmbeddingSequence eb{zb, fusion::Modality::bio, {}};
        fusion::EmbeddingSequence ec{zc, fusion::Modality::context, {}};
        eg.timestamps.resize(static_cast<std::size_t>(zg.rows));
        eb.timestamps.resize(static_cast<std::size_t>(zb.rows));
        ec.timestamps.resize(static_cast<std::size_t>(zc.rows));
        fused = fusion::attention_align(eg, eb, ec, fusion_view(model.params)).vectors;
    } else if (spec.fusion == FusionKind::single_modality) {
        fused = spec.use_gaze ? zg : (spec.use_bio ? zb : zc);
    }

    ParamSet tf_params;
    for (const auto& [name, t] : model.params.entries)
        if (name.rfind("tf.", 0) == 0) tf_params.add(name.substr(3), t);

    int correct = 0;
    double ce = 0.0;
    for (const Window& w : windows) {
        const std::vector<int> rows = detail::window_grid_rows(w, bf);
        Tensor win(w.length, fusion::kEmbeddingDim);
        if (spec.fusion == FusionKind::dtw_average) {
            Tensor zg_win(w.length, fusion::kEmbeddingDim), zb_win(w.length, fusion::kEmbeddingDim),
                zc_win(w.length, fusion::kEmbeddingDim);
            for (int i = 0; i < w.length; ++i)
                for (int j = 0; j < fusion::kEmbeddingDim; ++j) {
                    zg_win(i, j) = zg(rows[static_cast<std::size_t>(i)], j);
                    zb_win(i, j) = zb(rows[static_cast<std::size_t>(i)], j);
                    zc_win(i, j) = zc(rows[static_cast<std::size_t>(i)], j);
                }
            const std::vector<int> match = detail::dtw_bio_match(zg_win, zb_win);
            for (int i = 0; i < w.length; ++i)
                for (int j = 0; j < fusion::kEmbeddingDim; ++j)
                    win(i, j) = (zg_win(i, j) + zb_win(match[static_cast<std::size_t>(i)], j) +
                                 zc_win(i, j)) / 3.0;
        } else {
            for (int i = 0; i < w.length; ++i)
                for (int j = 0; j < fusion::kEmbeddingDim; ++j)
                    win(i, j) = fused(rows[static_cast<std::size_t>(i)], j);
        }
        const std::vector<double> logits = predictor::transformer_forward(win, spec.tf, tf_params);
        const std::vector<double> probs = predictor::softmax_vec(logits);
        const int pred = predictor::argmax_intent(probs);
        if (pred == w.label) ++correct;
        ce -= std::log(std::max(probs[static_cast<std::size_t>(w.label)], 1e-300));
        if (keep_predictions) {
            PredictionRow row;
            row.tick = ds.grids[static_cast<std::size_t>(w.episode)]
                           .ticks[static_cast<std::size_t>(w.end_grid_idx)];
            row.true_intent = w.label;
            row.argmax_intent = pred;
            row.probs = probs;
            res.predictions.push_back(std::move(row));
        }
    }
    res.count = static_cast<int>(windows.size());
    res.accuracy = static_cast<double>(correct) / res.count;
    res.mean_ce = ce / res.count;
    return res;
}

// Deterministic parallel map over an index range (used for episode
// generation); results land in input order regardless of thread count.
template <typename F>
inline void parallel_for(int n, int jobs, F&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic_int next{0};
    const int workers = std::min(jobs, n);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&]() {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (auto& t : pool) t.join();
}

}  // namespace zia::pipeline
