#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "zia/attention.hpp"
#include "zia/autodiff.hpp"
#include "zia/common.hpp"
#include "zia/edgecost.hpp"
#include "zia/rng.hpp"
#include "zia/tensor.hpp"

namespace zia::predictor {

using edgecost::AttentionKind;

struct TransformerConfig {
    int layers = 6;
    int model_dim = 128;
    int heads = 8;
    int ffn_dim = 512;
    int sequence_len = 100;
    AttentionKind attention_kind = AttentionKind::softmax;
    int intent_count = 10;
    int input_dim = 128;         // embedding width entering the input projection
    bool use_positional = true;  // sinusoidal encodings added after projection
    // Per-head scores scale by 1/sqrt(model_dim/heads); this flag restores
    // the literal single 1/sqrt(model_dim) scale.
    bool scale_full_dim = false;

    void validate() const {
        if (layers < 1) throw ConfigError("TransformerConfig: layers must be >= 1");
        if (model_dim % heads != 0)
            throw ConfigError("TransformerConfig: model_dim must divide by heads");
        if (sequence_len < 1 || intent_count < 1 || ffn_dim < 1 || input_dim < 1)
            throw ConfigError("TransformerConfig: dimensions must be positive");
    }

    edgecost::ModelDims dims() const {
        return edgecost::ModelDims{layers, model_dim, heads, ffn_dim, sequence_len, intent_count};
    }
};

// Diagonal Gaussian posterior over a parameter tensor, prior N(0,1).
struct VariationalPosterior {
    Tensor mu;
    Tensor sigma;

    void validate() const {
        if (!mu.same_shape(sigma)) throw std::invalid_argument("VariationalPosterior: shape mismatch");
        for (double s : sigma.v)
            if (!(s > 0.0)) throw std::invalid_argument("VariationalPosterior: sigma must be > 0");
    }
};

// KL(N(mu, sigma^2) || N(0,1)) summed elementwise:
// sum (mu^2 + sigma^2 - 1)/2 - ln sigma.
inline double kl_gaussian(const Tensor& mu, const Tensor& sigma) {
    if (!mu.same_shape(sigma)) throw std::invalid_argument("kl_gaussian: shape mismatch");
    double kl = 0.0;
    for (int i = 0; i < mu.size(); ++i) {
        const double m = mu.v[static_cast<std::size_t>(i)];
        const double s = sigma.v[static_cast<std::size_t>(i)];
        if (!(s > 0.0)) throw std::invalid_argument("kl_gaussian: sigma must be > 0");
        kl += 0.5 * (m * m + s * s - 1.0) - std::log(s);
    }
    return kl;
}

struct IntentDistribution {
    std::vector<double> probs;
    double entropy_bits = 0.0;
    int sample_count = 0;
};

// Lowest index wins ties, so downstream behavior is deterministic.
inline int argmax_intent(const std::vector<double>& probs) {
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

// Parameter names are stable; checkpointing, SGD and compression iterate the
// set generically. sigma parameters are stored as rho with sigma=softplus(rho).
inline ParamSet init_transformer_weights(const TransformerConfig& cfg, rng::Stream& g,
                                         double init_scale = 0.4) {
    cfg.validate();
    ParamSet w;
    const int d = cfg.model_dim;
    const auto lin = [&](int rows, int cols) {
        const double s = init_scale / std::sqrt(static_cast<double>(rows));
        return random_uniform(rows, cols, -s, s, g);
    };
    w.add("in_proj.w", lin(cfg.input_dim, d));
    w.add("in_proj.b", Tensor::zeros(1, d));
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        w.add(p + "ln1.g", Tensor::full(1, d, 1.0));
        w.add(p + "ln1.b", Tensor::zeros(1, d));
        w.add(p + "attn.wq", lin(d, d));
        w.add(p + "attn.wk", lin(d, d));
        w.add(p + "attn.wv", lin(d, d));
        w.add(p + "attn.wo", lin(d, d));
        w.add(p + "ln2.g", Tensor::full(1, d, 1.0));
        w.add(p + "ln2.b", Tensor::zeros(1, d));
        w.add(p + "ffn.w1", lin(d, cfg.ffn_dim));
        w.add(p + "ffn.b1", Tensor::zeros(1, cfg.ffn_dim));
        w.add(p + "ffn.w2", lin(cfg.ffn_dim, d));
        w.add(p + "ffn.b2", Tensor::zeros(1, d));
    }
    w.add("final_ln.g", Tensor::full(1, d, 1.0));
    w.add("final_ln.b", Tensor::zeros(1, d));
    w.add("head.w", lin(d, cfg.intent_count));
    w.add("head.b", Tensor::zeros(1, cfg.intent_count));
    // rho = softplus^-1(0.05): small initial posterior spread.
    const double rho0 = std::log(std::expm1(0.05));
    w.add("head.w_rho", Tensor::full(d, cfg.intent_count, rho0));
    w.add("head.b_rho", Tensor::full(1, cfg.intent_count, rho0));
    w.add("value.w", lin(d, 1));
    w.add("value.b", Tensor::zeros(1, 1));
    return w;
}

inline Tensor positional_encoding(int n, int d) {
    Tensor pe(n, d);
    for (int pos = 0; pos < n; ++pos)
        for (int j = 0; j < d; ++j) {
            const int base = (j % 2 == 0) ? j : j - 1;
            const double denom = std::pow(10000.0, static_cast<double>(base) / d);
            pe(pos, j) = (j % 2 == 0) ? std::sin(pos / denom) : std::cos(pos / denom);
        }
    return pe;
}

// ---------------------------------------------------------------------------
// Tape forward
// ---------------------------------------------------------------------------

// Tape handles for a parameter set; builds each tensor as a tape leaf once.
struct TapeParams {
    std::unordered_map<std::string, ad::Value> by_name;
    std::vector<std::pair<std::string, ad::Value>> ordered;

    static TapeParams push_all(ad::Tape& tape, const ParamSet& w) {
        TapeParams tp;
        for (const auto& [name, t] : w.entries) {
            const ad::Value v = tape.param(t);
            tp.by_name.emplace(name, v);
            tp.ordered.emplace_back(name, v);
        }
        return tp;
    }

    ad::Value at(const std::string& name) const {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::invalid_argument("TapeParams: missing " + name);
        return it->second;
    }
};

struct ForwardResult {
    ad::Value logits;   // 1 x intent_count
    ad::Value pooled;   // 1 x model_dim (after final layer norm)
    bool denominator_warning = false;
};

namespace detail {

inline ad::Value tape_layer_norm(ad::Tape& tape, ad::Value x, ad::Value g, ad::Value b) {
    return tape.add_rowvec(tape.mul_rowvec(tape.layer_norm(x), g), b);
}

inline ad::Value tape_phi(ad::Tape& tape, ad::Value x) {
    ad::Value sq = tape.mul(x, x);
    ad::Value s = tape.row_sum(sq);
    ad::Value w = tape.exp_(tape.scale(s, -0.5));
    return tape.mul_colvec(x, w);
}

inline ad::Value tape_attention(ad::Tape& tape, ad::Value x, const TransformerConfig& cfg,
                                ad::Value wq, ad::Value wk, ad::Value wv, ad::Value wo,
                                bool* denom_warning) {
    const int d = cfg.model_dim;
    const int dh = d / cfg.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.scale_full_dim ? d : dh));
    ad::Value q = tape.matmul(x, wq);
    ad::Value k = tape.matmul(x, wk);
    ad::Value v = tape.matmul(x, wv);
    std::vector<ad::Value> heads;
    for (int h = 0; h < cfg.heads; ++h) {
        ad::Value qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
        ad::Value kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
        ad::Value vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
        if (cfg.attention_kind == AttentionKind::softmax) {
            ad::Value scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), scale);
            ad::Value a = tape.row_softmax(scores);
            heads.push_back(tape.matmul(a, vh));
        } else {
            ad::Value pq = tape_phi(tape, qh);
            ad::Value pk = tape_phi(tape, kh);
            ad::Value ktv = tape.matmul(tape.transpose(pk), vh);
            ad::Value num = tape.matmul(pq, ktv);
            const int n = tape.val(x).rows;
            Tensor ones(1, n);
            ones.fill(1.0);
            ad::Value ksum = tape.matmul(tape.constant(ones), pk);  // 1 x dh
            ad::Value denom = tape.matmul(pq, tape.transpose(ksum));
            bool clipped = false;
            ad::Value out = tape.div_colvec(num, denom, 1e-9, &clipped);
            if (clipped && denom_warning != nullptr) *denom_warning = true;
            heads.push_back(out);
        }
    }
    ad::Value cat = tape.concat_cols(heads);
    return tape.matmul(cat, wo);
}

}  // namespace detail

// Pre-norm residual transformer over a fused embedding window. `z` has one
// row per tick (N <= sequence_len). `head_override` substitutes the
// classifier weights node (used for variational sampling).
inline ForwardResult build_forward(ad::Tape& tape, ad::Value z, const TransformerConfig& cfg,
                                   const TapeParams& params,
                                   std::optional<ad::Value> head_w_override = std::nullopt,
                                   std::optional<ad::Value> head_b_override = std::nullopt) {
    cfg.validate();
    const int n = tape.val(z).rows;
    if (n < 1) throw std::invalid_argument("build_forward: empty input");
    if (n > cfg.sequence_len)
        throw std::invalid_argument("build_forward: input length " + std::to_string(n) +
                                    " exceeds sequence_len " + std::to_string(cfg.sequence_len));

    ForwardResult res;
    ad::Value x = tape.add_rowvec(tape.matmul(z, params.at("in_proj.w")), params.at("in_proj.b"));
    if (cfg.use_positional) {
        x = tape.add(x, tape.constant(positional_encoding(n, cfg.model_dim)));
    }
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        ad::Value normed =
            detail::tape_layer_norm(tape, x, params.at(p + "ln1.g"), params.at(p + "ln1.b"));
        ad::Value att = detail::tape_attention(tape, normed, cfg, params.at(p + "attn.wq"),
                                               params.at(p + "attn.wk"), params.at(p + "attn.wv"),
                                               params.at(p + "attn.wo"),
                                               &res.denominator_warning);
        x = tape.add(x, att);
        ad::Value normed2 =
            detail::tape_layer_norm(tape, x, params.at(p + "ln2.g"), params.at(p + "ln2.b"));
        ad::Value h = tape.relu(
            tape.add_rowvec(tape.matmul(normed2, params.at(p + "ffn.w1")), params.at(p + "ffn.b1")));
        ad::Value ffn =
            tape.add_rowvec(tape.matmul(h, params.at(p + "ffn.w2")), params.at(p + "ffn.b2"));
        x = tape.add(x, ffn);
    }
    ad::Value fin = detail::tape_layer_norm(tape, x, params.at("final_ln.g"), params.at("final_ln.b"));
    // Last-position pooling: the window is a trailing history and the label
    // lives at its end; attention lets that position read the whole window.
    res.pooled = tape.gather_rows(fin, {n - 1});
    const ad::Value hw = head_w_override ? *head_w_override : params.at("head.w");
    const ad::Value hb = head_b_override ? *head_b_override : params.at("head.b");
    res.logits = tape.add_rowvec(tape.matmul(res.pooled, hw), hb);
    return res;
}

// Deterministic forward pass; returns intent logits.
inline std::vector<double> transformer_forward(const Tensor& z, const TransformerConfig& cfg,
                                               const ParamSet& weights,
                                               bool* denominator_warning = nullptr) {
    ad::Tape tape;
    TapeParams params = TapeParams::push_all(tape, weights);
    ForwardResult fw = build_forward(tape, tape.constant(z), cfg, params);
    if (denominator_warning != nullptr) *denominator_warning = fw.denominator_warning;
    const Tensor& lg = tape.val(fw.logits);
    return std::vector<double>(lg.v.begin(), lg.v.end());
}

inline std::vector<double> softmax_vec(const std::vector<double>& logits) {
    double mx = -1e300;
    for (double x : logits) mx = std::max(mx, x);
    double s = 0.0;
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        s += p[i];
    }
    for (double& x : p) x /= s;
    return p;
}

inline double entropy_bits_of(const std::vector<double>& probs) {
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0) h -= p * std::log2(p);
    return h;
}

inline Tensor softplus_tensor(const Tensor& rho) {
    Tensor s = rho;
    for (auto& x : s.v) x = (x > 30.0) ? x : std::log1p(std::exp(x));
    return s;
}

// Posterior over the classifier layer read from the rho parameters.
inline VariationalPosterior head_posterior(const ParamSet& weights) {
    VariationalPosterior post;
    post.mu = weights.at("head.w");
    post.sigma = softplus_tensor(weights.at("head.w_rho"));
    post.validate();
    return post;
}

struct VariationalPrediction {
    IntentDistribution dist;
    double elbo = 0.0;          // mean log-lik of true intent (if given) - beta*KL
    double kl = 0.0;
    bool has_loglik = false;
};

// Monte Carlo average of softmaxed logits over classifier weights sampled
// from the posterior. The per-draw seeds split from `seed`, so parallel or
// repeated evaluation is deterministic.
inline VariationalPrediction variational_predict(const Tensor& z, const TransformerConfig& cfg,
                                                 const ParamSet& weights, int samples, double beta,
                                                 std::uint64_t seed,
                                                 std::optional<int> true_intent = std::nullopt) {
    if (samples < 1) throw std::invalid_argument("variational_predict: samples must be >= 1");
    if (beta < 0.0) throw std::invalid_argument("variational_predict: beta must be >= 0");
    const Tensor& mu_w = weights.at("head.w");
    const Tensor& mu_b = weights.at("head.b");
    const Tensor sig_w = softplus_tensor(weights.at("head.w_rho"));
    const Tensor sig_b = softplus_tensor(weights.at("head.b_rho"));

    VariationalPrediction out;
    out.kl = kl_gaussian(mu_w, sig_w) + kl_gaussian(mu_b, sig_b);

    // The transformer trunk below the head is shared across draws.
    ad::Tape tape;
    TapeParams params = TapeParams::push_all(tape, weights);
    ForwardResult fw = build_forward(tape, tape.constant(z), cfg, params);
    const Tensor pooled = tape.val(fw.pooled);

    std::vector<double> mean_probs(static_cast<std::size_t>(cfg.intent_count), 0.0);
    double loglik = 0.0;
    rng::Stream root(seed, "montecarlo");
    for (int s = 0; s < samples; ++s) {
        rng::Stream draw = root.child(static_cast<std::uint64_t>(s));
        std::vector<double> logits(static_cast<std::size_t>(cfg.intent_count), 0.0);
        for (int j = 0; j < cfg.intent_count; ++j) {
            double acc = mu_b(0, j) + sig_b(0, j) * draw.normal();
            for (int i = 0; i < cfg.model_dim; ++i)
                acc += pooled(0, i) * (mu_w(i, j) + sig_w(i, j) * draw.normal());
            logits[static_cast<std::size_t>(j)] = acc;
        }
        const std::vector<double> probs = softmax_vec(logits);
        for (std::size_t j = 0; j < probs.size(); ++j) mean_probs[j] += probs[j] / samples;
        if (true_intent) {
            loglik += std::log(std::max(probs[static_cast<std::size_t>(*true_intent)], 1e-300)) /
                      samples;
        }
    }
    out.dist.probs = mean_probs;
    out.dist.entropy_bits = entropy_bits_of(mean_probs);
    out.dist.sample_count = samples;
    out.has_loglik = true_intent.has_value();
    out.elbo = (out.has_loglik ? loglik : 0.0) - beta * out.kl;
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic bytes, dims header, 32-bit floats + JSON metadata
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'Z', 'I', 'A', 'W'};

inline void save_checkpoint(const ParamSet& weights, const nlohmann::json& metadata,
                            const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(kCheckpointMagic, 4);
    const std::uint32_t version = 1;
    const auto w32 = [&](std::uint32_t x) { f.write(reinterpret_cast<const char*>(&x), 4); };
    w32(version);
    w32(static_cast<std::uint32_t>(weights.entries.size()));
    for (const auto& [name, t] : weights.entries) {
        w32(static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        w32(static_cast<std::uint32_t>(t.rows));
        w32(static_cast<std::uint32_t>(t.cols));
        for (double x : t.v) {
            const float xf = static_cast<float>(x);
            f.write(reinterpret_cast<const char*>(&xf), 4);
        }
    }
    nlohmann::json meta = metadata;
    meta["format"] = "zia-checkpoint-v1";
    auto tensors = nlohmann::json::array();
    for (const auto& [name, t] : weights.entries)
        tensors.push_back({{"name", name}, {"rows", t.rows}, {"cols", t.cols}});
    meta["tensors"] = tensors;
    std::ofstream mf(path + ".json");
    mf << meta.dump(2) << '\n';
}

inline ParamSet load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic bytes");
    const auto r32 = [&]() {
        std::uint32_t x = 0;
        f.read(reinterpret_cast<char*>(&x), 4);
        return x;
    };
    const std::uint32_t version = r32();
    if (version != 1) throw std::runtime_error("load_checkpoint: unsupported version");
    const std::uint32_t count = r32();
    ParamSet w;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r32();
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const int rows = static_cast<int>(r32());
        const int cols = static_cast<int>(r32());
        Tensor t(rows, cols);
        for (auto& x : t.v) {
            float xf = 0.0f;
            f.read(reinterpret_cast<char*>(&xf), 4);
            x = static_cast<double>(xf);
        }
        w.add(name, std::move(t));
    }
    if (!f) throw std::runtime_error("load_checkpoint: truncated file");
    return w;
}

}  // namespace zia::predictor
