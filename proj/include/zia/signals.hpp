#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "zia/common.hpp"
#include "zia/rng.hpp"

namespace zia::signals {

inline constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Noise models
// ---------------------------------------------------------------------------

// Zero-mean Laplace noise; samples have variance 2*scale^2.
struct LaplacianNoiseSpec {
    double scale = 1.0;

    void validate() const {
        if (!(scale > 0.0)) throw ConfigError("LaplacianNoiseSpec: scale must be > 0");
    }
};

enum class NoiseKind { laplacian, gaussian };

// Per-modality additive noise. `scale` is the Laplace b (or the Gaussian
// sigma when kind == gaussian). A scale of exactly 0 disables noise for that
// modality, which makes frames equal the clean templates bit for bit.
struct ModalityNoise {
    NoiseKind kind = NoiseKind::laplacian;
    double gaze = 0.12;   // pixels
    double heart = 2.0;   // bpm
    double eeg = 5.0;     // microvolts

    void validate() const {
        if (gaze < 0.0 || heart < 0.0 || eeg < 0.0)
            throw ConfigError("ModalityNoise: scales must be >= 0");
    }
};

inline double draw_noise(rng::Stream& g, NoiseKind kind, double scale) {
    if (scale == 0.0) return 0.0;
    return kind == NoiseKind::laplacian ? g.laplace(scale) : g.normal(0.0, scale);
}

// Inverse-CDF Laplace sampling, deterministic in (spec, count, seed).
inline std::vector<double> sample_laplacian(const LaplacianNoiseSpec& spec, int count,
                                            std::uint64_t seed) {
    spec.validate();
    if (count < 1) throw std::invalid_argument("sample_laplacian: count must be >= 1");
    rng::Stream g(seed, "laplace");
    std::vector<double> out(static_cast<std::size_t>(count));
    for (auto& x : out) x = g.laplace(spec.scale);
    return out;
}

// Power spectral density of the Laplacian jitter model: 2b^2 / (b^2 + (2 pi f)^2).
inline double spectral_density(double scale, double f) {
    if (!(scale > 0.0)) throw std::invalid_argument("spectral_density: scale must be > 0");
    if (f < 0.0) throw std::invalid_argument("spectral_density: f must be >= 0");
    const double w = 2.0 * kPi * f;
    return 2.0 * scale * scale / (scale * scale + w * w);
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

struct Rates {
    double gaze = 30.0;
    double heart = 1.0;
    double eeg = 256.0;
    double context = 1.0;
};

// Deterministic clean-signal template for one intent. Gaze fixates on a
// point, heart holds a baseline, EEG is a per-intent tone in the 8-30 Hz
// band with a per-channel phase offset.
struct IntentTemplate {
    double gaze_x = 0.0;
    double gaze_y = 0.0;
    double heart_bpm = 60.0;
    double eeg_freq_hz = 10.0;
    double eeg_amp_uv = 20.0;
    int preferred_location = 0;
    int preferred_usage = 0;
};

struct ContextModel {
    int location_vocab = 8;
    int usage_vocab = 8;
    // 0 = independent of intent, 1 = deterministic intent -> category.
    double strength = 0.8;

    void validate() const {
        if (location_vocab < 1 || usage_vocab < 1)
            throw ConfigError("ContextModel: vocabularies must be >= 1");
        if (strength < 0.0 || strength > 1.0)
            throw ConfigError("ContextModel: strength must be in [0,1]");
    }
};

struct ScenarioConfig {
    int intent_count = 10;
    std::vector<std::vector<double>> transition_matrix;  // row-stochastic
    std::vector<double> initial_distribution;            // empty => uniform
    int eeg_channels = 8;
    Rates rates;
    ModalityNoise noise;
    std::vector<IntentTemplate> templates;
    ContextModel context;
    double master_rate_hz = 256.0;
    std::int64_t duration_ticks = 256 * 60;
    std::int64_t intent_hold_ticks = 256;  // master ticks between Markov transitions
    std::uint64_t seed = 0;
    bool keep_clean = true;

    void validate() const {
        if (intent_count < 1) throw ConfigError("ScenarioConfig: intent_count must be >= 1");
        if (eeg_channels < 4 || eeg_channels > 16)
            throw ConfigError("ScenarioConfig: eeg_channels must be in [4,16]");
        if (!(rates.gaze > 0 && rates.heart > 0 && rates.eeg > 0 && rates.context > 0))
            throw ConfigError("ScenarioConfig: all rates must be > 0");
        if (!(master_rate_hz > 0)) throw ConfigError("ScenarioConfig: master rate must be > 0");
        if (duration_ticks < 1) throw ConfigError("ScenarioConfig: duration must be >= 1");
        if (intent_hold_ticks < 1) throw ConfigError("ScenarioConfig: intent hold must be >= 1");
        noise.validate();
        context.validate();
        if (static_cast<int>(transition_matrix.size()) != intent_count)
            throw ConfigError("ScenarioConfig: transition matrix must have one row per intent");
        for (std::size_t r = 0; r < transition_matrix.size(); ++r) {
            const auto& row = transition_matrix[r];
            if (static_cast<int>(row.size()) != intent_count)
                throw ConfigError("ScenarioConfig: transition row " + std::to_string(r) +
                                  " has wrong length");
            double s = 0.0;
            for (double p : row) {
                if (p < 0.0)
                    throw ConfigError("ScenarioConfig: negative transition probability in row " +
                                      std::to_string(r));
                s += p;
            }
            if (std::abs(s - 1.0) > 1e-9)
                throw ConfigError("ScenarioConfig: transition row " + std::to_string(r) +
                                  " sums to " + fmt_double(s) + ", expected 1");
        }
        if (!initial_distribution.empty()) {
            if (static_cast<int>(initial_distribution.size()) != intent_count)
                throw ConfigError("ScenarioConfig: initial distribution has wrong length");
            double s = 0.0;
            for (double p : initial_distribution) s += p;
            if (std::abs(s - 1.0) > 1e-9)
                throw ConfigError("ScenarioConfig: initial distribution must sum to 1");
        }
    }

    // Throws if any intent lacks a template.
    const IntentTemplate& template_for(int intent) const {
        if (intent < 0 || intent >= static_cast<int>(templates.size()))
            throw ConfigError("ScenarioConfig: template_map missing intent " +
                              std::to_string(intent));
        return templates[static_cast<std::size_t>(intent)];
    }
};

inline std::vector<std::vector<double>> uniform_transition(int n) {
    return std::vector<std::vector<double>>(
        static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), 1.0 / n));
}

inline std::vector<std::vector<double>> sticky_transition(int n, double stay) {
    if (n == 1) return {{1.0}};
    std::vector<std::vector<double>> m(static_cast<std::size_t>(n),
                                       std::vector<double>(static_cast<std::size_t>(n),
                                                           (1.0 - stay) / (n - 1)));
    for (int i = 0; i < n; ++i) m[i][i] = stay;
    return m;
}

inline std::vector<std::vector<double>> identity_transition(int n) {
    std::vector<std::vector<double>> m(static_cast<std::size_t>(n),
                                       std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (int i = 0; i < n; ++i) m[i][i] = 1.0;
    return m;
}

// Default template map: gaze targets on a ring (optionally with groups of
// intents sharing one target, which caps gaze-only decodability), stepped
// heart baselines, per-intent EEG tones spread across a band.
struct TemplateLayout {
    double gaze_center_x = 640.0;
    double gaze_center_y = 360.0;
    double gaze_radius = 200.0;
    double heart_base = 60.0;
    double heart_step = 3.0;
    double eeg_amp = 20.0;
    double eeg_band_lo = 10.0;
    double eeg_band_hi = 28.0;
    // Each group lists intents that share the first member's gaze target.
    std::vector<std::vector<int>> shared_gaze_groups;
};

inline std::vector<IntentTemplate> build_templates(int intent_count, const TemplateLayout& lay,
                                                   const ContextModel& ctx) {
    std::vector<IntentTemplate> out(static_cast<std::size_t>(intent_count));
    for (int i = 0; i < intent_count; ++i) {
        auto& t = out[static_cast<std::size_t>(i)];
        const double a = 2.0 * kPi * i / intent_count;
        t.gaze_x = lay.gaze_center_x + lay.gaze_radius * std::cos(a);
        t.gaze_y = lay.gaze_center_y + lay.gaze_radius * std::sin(a);
        t.heart_bpm = lay.heart_base + lay.heart_step * i;
        t.eeg_freq_hz = (intent_count == 1)
                            ? lay.eeg_band_lo
                            : lay.eeg_band_lo +
                                  (lay.eeg_band_hi - lay.eeg_band_lo) * i / (intent_count - 1);
        t.eeg_amp_uv = lay.eeg_amp;
        t.preferred_location = i % ctx.location_vocab;
        t.preferred_usage = (3 * i + 1) % ctx.usage_vocab;
    }
    for (const auto& group : lay.shared_gaze_groups) {
        if (group.empty()) continue;
        const auto& lead = out.at(static_cast<std::size_t>(group.front()));
        for (int m : group) {
            out.at(static_cast<std::size_t>(m)).gaze_x = lead.gaze_x;
            out.at(static_cast<std::size_t>(m)).gaze_y = lead.gaze_y;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

struct ContextFields {
    std::int64_t time_index = 0;
    int location_id = 0;
    int usage_id = 0;
};

// One master-clock tick of observations. Modalities below their declared rate
// hold the last sample (zero-order hold); `fresh_*` marks ticks where a new
// sample was drawn.
struct SignalFrame {
    std::int64_t t = 0;
    double gaze_x = 0.0;
    double gaze_y = 0.0;
    double heart = 0.0;
    std::vector<double> eeg;
    ContextFields context;
    bool fresh_gaze = false;
    bool fresh_heart = false;
    bool fresh_eeg = false;
    bool fresh_context = false;
};

struct EpisodeTrace {
    std::vector<SignalFrame> frames;
    std::vector<int> intents;               // ground truth per master tick
    std::vector<SignalFrame> clean;         // noise-free frames (empty if not kept)
    ScenarioConfig config;

    std::int64_t ticks() const { return static_cast<std::int64_t>(frames.size()); }
};

namespace detail {
// A modality sampled at rate r produces a fresh sample at master tick t iff
// floor((t+1)*r/fs) > floor(t*r/fs); tick 0 is always fresh.
inline bool fresh_at(std::int64_t t, double rate, double master) {
    if (t == 0) return true;
    const auto k = [rate, master](std::int64_t tick) {
        return static_cast<std::int64_t>(std::floor(static_cast<double>(tick) * rate / master));
    };
    return k(t) > k(t - 1);
}
}  // namespace detail

inline EpisodeTrace gen_episode(const ScenarioConfig& config) {
    config.validate();
    if (static_cast<int>(config.templates.size()) < config.intent_count)
        throw ConfigError("gen_episode: template_map missing intents (have " +
                          std::to_string(config.templates.size()) + ", need " +
                          std::to_string(config.intent_count) + ")");

    rng::Stream chain(config.seed, "simulation/markov");
    rng::Stream noise(config.seed, "simulation/noise");
    rng::Stream ctxg(config.seed, "simulation/context");

    EpisodeTrace ep;
    ep.config = config;
    ep.frames.resize(static_cast<std::size_t>(config.duration_ticks));
    ep.intents.resize(static_cast<std::size_t>(config.duration_ticks));
    if (config.keep_clean) ep.clean.resize(static_cast<std::size_t>(config.duration_ticks));

    // Intent chain on the hold grid.
    int intent;
    if (config.initial_distribution.empty()) {
        intent = chain.uniform_int(config.intent_count);
    } else {
        intent = chain.categorical(config.initial_distribution);
    }

    const double fs = config.master_rate_hz;
    const int k = config.eeg_channels;

    SignalFrame hold{};       // last noisy values
    SignalFrame hold_clean{};
    hold.eeg.assign(static_cast<std::size_t>(k), 0.0);
    hold_clean.eeg.assign(static_cast<std::size_t>(k), 0.0);

    std::vector<double> ctx_probs;

    for (std::int64_t t = 0; t < config.duration_ticks; ++t) {
        if (t > 0 && t % config.intent_hold_ticks == 0) {
            intent = chain.categorical(config.transition_matrix[static_cast<std::size_t>(intent)]);
        }
        ep.intents[static_cast<std::size_t>(t)] = intent;
        const IntentTemplate& tpl = config.template_for(intent);

        const bool fg = detail::fresh_at(t, config.rates.gaze, fs);
        const bool fh = detail::fresh_at(t, config.rates.heart, fs);
        const bool fe = detail::fresh_at(t, config.rates.eeg, fs);
        const bool fc = detail::fresh_at(t, config.rates.context, fs);

        if (fg) {
            hold_clean.gaze_x = tpl.gaze_x;
            hold_clean.gaze_y = tpl.gaze_y;
            hold.gaze_x = hold_clean.gaze_x + draw_noise(noise, config.noise.kind, config.noise.gaze);
            hold.gaze_y = hold_clean.gaze_y + draw_noise(noise, config.noise.kind, config.noise.gaze);
        }
        if (fh) {
            hold_clean.heart = tpl.heart_bpm;
            hold.heart = hold_clean.heart + draw_noise(noise, config.noise.kind, config.noise.heart);
        }
        if (fe) {
            const double time_s = static_cast<double>(t) / fs;
            for (int c = 0; c < k; ++c) {
                const double phase = 2.0 * kPi * c / k;
                const double x =
                    tpl.eeg_amp_uv * std::sin(2.0 * kPi * tpl.eeg_freq_hz * time_s + phase);
                hold_clean.eeg[static_cast<std::size_t>(c)] = x;
                hold.eeg[static_cast<std::size_t>(c)] =
                    x + draw_noise(noise, config.noise.kind, config.noise.eeg);
            }
        }
        if (fc) {
            // Categorical draws are part of the scenario (deterministic given
            // the seed); the fields themselves carry no additive noise.
            const auto draw_cat = [&](int vocab, int preferred) {
                ctx_probs.assign(static_cast<std::size_t>(vocab),
                                 (1.0 - config.context.strength) / vocab);
                ctx_probs[static_cast<std::size_t>(preferred)] += config.context.strength;
                return ctxg.categorical(ctx_probs);
            };
            hold.context.location_id = draw_cat(config.context.location_vocab,
                                                tpl.preferred_location);
            hold.context.usage_id = draw_cat(config.context.usage_vocab, tpl.preferred_usage);
            hold_clean.context = hold.context;
        }
        hold.context.time_index = t;
        hold_clean.context.time_index = t;

        SignalFrame& f = ep.frames[static_cast<std::size_t>(t)];
        f = hold;
        f.t = t;
        f.fresh_gaze = fg;
        f.fresh_heart = fh;
        f.fresh_eeg = fe;
        f.fresh_context = fc;
        if (config.keep_clean) {
            SignalFrame& cf = ep.clean[static_cast<std::size_t>(t)];
            cf = hold_clean;
            cf.t = t;
            cf.fresh_gaze = fg;
            cf.fresh_heart = fh;
            cf.fresh_eeg = fe;
            cf.fresh_context = fc;
        }
    }
    return ep;
}

// Per-modality achieved SNR in dB (clean power over residual power), measured
// on fresh samples. Returns NaN for a modality with zero noise power.
struct AchievedSnr {
    double gaze_db = 0.0;
    double heart_db = 0.0;
    double eeg_db = 0.0;
};

inline AchievedSnr achieved_snr(const EpisodeTrace& ep) {
    if (ep.clean.empty()) throw std::invalid_argument("achieved_snr: clean frames not kept");
    double sg = 0, ng = 0, sh = 0, nh = 0, se = 0, ne = 0;
    double mgx = 0, mgy = 0, mh = 0;
    std::int64_t cg = 0, ch = 0;
    for (std::size_t i = 0; i < ep.frames.size(); ++i) {
        const auto& f = ep.frames[i];
        const auto& c = ep.clean[i];
        if (f.fresh_gaze) { mgx += c.gaze_x; mgy += c.gaze_y; ++cg; }
        if (f.fresh_heart) { mh += c.heart; ++ch; }
    }
    if (cg > 0) { mgx /= static_cast<double>(cg); mgy /= static_cast<double>(cg); }
    if (ch > 0) { mh /= static_cast<double>(ch); }
    for (std::size_t i = 0; i < ep.frames.size(); ++i) {
        const auto& f = ep.frames[i];
        const auto& c = ep.clean[i];
        if (f.fresh_gaze) {
            sg += (c.gaze_x - mgx) * (c.gaze_x - mgx) + (c.gaze_y - mgy) * (c.gaze_y - mgy);
            ng += (f.gaze_x - c.gaze_x) * (f.gaze_x - c.gaze_x) +
                  (f.gaze_y - c.gaze_y) * (f.gaze_y - c.gaze_y);
        }
        if (f.fresh_heart) {
            sh += (c.heart - mh) * (c.heart - mh);
            nh += (f.heart - c.heart) * (f.heart - c.heart);
        }
        if (f.fresh_eeg) {
            for (std::size_t ch2 = 0; ch2 < f.eeg.size(); ++ch2) {
                se += c.eeg[ch2] * c.eeg[ch2];
                ne += (f.eeg[ch2] - c.eeg[ch2]) * (f.eeg[ch2] - c.eeg[ch2]);
            }
        }
    }
    const auto db = [](double s, double n) {
        if (n <= 0.0) return std::nan("");
        return 10.0 * std::log10(s / n);
    };
    return AchievedSnr{db(sg, ng), db(sh, nh), db(se, ne)};
}

// CSV layout: one row per master-clock tick:
// t,intent,gaze_x,gaze_y,heart,eeg_0..eeg_{k-1},time_index,location_id,usage_id
inline void write_episode_csv(const EpisodeTrace& ep, std::ostream& os) {
    const int k = ep.config.eeg_channels;
    os << "t,intent,gaze_x,gaze_y,heart";
    for (int c = 0; c < k; ++c) os << ",eeg_" << c;
    os << ",time_index,location_id,usage_id\n";
    for (std::size_t i = 0; i < ep.frames.size(); ++i) {
        const auto& f = ep.frames[i];
        os << f.t << ',' << ep.intents[i] << ',' << fmt_double(f.gaze_x) << ','
           << fmt_double(f.gaze_y) << ',' << fmt_double(f.heart);
        for (int c = 0; c < k; ++c) os << ',' << fmt_double(f.eeg[static_cast<std::size_t>(c)]);
        os << ',' << f.context.time_index << ',' << f.context.location_id << ','
           << f.context.usage_id << '\n';
    }
}

}  // namespace zia::signals
