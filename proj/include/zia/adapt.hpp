#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zia/autodiff.hpp"
#include "zia/common.hpp"
#include "zia/predictor.hpp"
#include "zia/preprocess.hpp"
#include "zia/rng.hpp"
#include "zia/signals.hpp"
#include "zia/tensor.hpp"

namespace zia::adapt {

// ---------------------------------------------------------------------------
// Feedback and reward
// ---------------------------------------------------------------------------

enum class Outcome { accepted, overridden, ignored };

struct FeedbackEvent {
    int predicted = 0;
    Outcome outcome = Outcome::ignored;
    std::optional<int> corrected;

    void validate() const {
        if ((outcome == Outcome::overridden) != corrected.has_value())
            throw std::invalid_argument(
                "FeedbackEvent: corrected intent present iff outcome is overridden");
    }
};

// The three-case mapping: accepted -> +1, overridden -> -1, ignored -> 0.
inline double reward(int /*predicted*/, const FeedbackEvent& feedback) {
    feedback.validate();
    switch (feedback.outcome) {
        case Outcome::accepted: return 1.0;
        case Outcome::overridden: return -1.0;
        case Outcome::ignored: return 0.0;
    }
    return 0.0;
}

// Stochastic feedback source: accept a correct prediction with probability
// 1 - accept_noise; override a wrong one (supplying the true intent) with
// probability override_prob, otherwise ignore.
struct UserModel {
    double accept_noise = 0.0;
    double override_prob = 1.0;

    FeedbackEvent feedback(int predicted, int true_intent, rng::Stream& g) const {
        FeedbackEvent ev;
        ev.predicted = predicted;
        if (predicted == true_intent) {
            ev.outcome = (g.uniform01() < 1.0 - accept_noise) ? Outcome::accepted
                                                              : Outcome::ignored;
        } else if (g.uniform01() < override_prob) {
            ev.outcome = Outcome::overridden;
            ev.corrected = true_intent;
        } else {
            ev.outcome = Outcome::ignored;
        }
        return ev;
    }
};

// ---------------------------------------------------------------------------
// Advantage estimation (GAE)
// ---------------------------------------------------------------------------

// delta_t = r_t + gamma*V_{t+1} - V_t (terminal bootstrap 0);
// A_t = delta_t + gamma*lambda*A_{t+1}. When zero_mean is set the batch mean
// is subtracted afterwards.
inline std::vector<double> advantage_estimate(const std::vector<double>& rewards,
                                              const std::vector<double>& values, double gamma,
                                              double lam, bool zero_mean = true) {
    if (rewards.size() != values.size())
        throw std::invalid_argument("advantage_estimate: length mismatch");
    if (!(gamma >= 0.0 && gamma <= 1.0 && lam >= 0.0 && lam <= 1.0))
        throw std::invalid_argument("advantage_estimate: gamma, lambda must be in [0,1]");
    const std::size_t n = rewards.size();
    std::vector<double> adv(n, 0.0);
    double running = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        const double next_v = (i + 1 < n) ? values[i + 1] : 0.0;
        const double delta = rewards[i] + gamma * next_v - values[i];
        running = delta + gamma * lam * running;
        adv[i] = running;
    }
    if (zero_mean && n > 0) {
        double m = 0.0;
        for (double a : adv) m += a;
        m /= static_cast<double>(n);
        for (double& a : adv) a -= m;
    }
    return adv;
}

// ---------------------------------------------------------------------------
// PPO clipped surrogate
// ---------------------------------------------------------------------------

// min(r*A, clip(r, lo, hi)*A): pessimistic w.r.t. the ratio in the direction
// of the advantage.
inline double clipped_surrogate(double ratio, double advantage, double clip_lo = 0.8,
                                double clip_hi = 1.2) {
    return std::min(ratio * advantage, std::clamp(ratio, clip_lo, clip_hi) * advantage);
}

struct TrajectoryBatch {
    Tensor states;  // one row per step (the policy input embedding)
    std::vector<int> actions;
    std::vector<double> rewards;       // each in {-1, 0, +1}
    std::vector<double> old_log_probs;
    std::vector<double> advantages;
    std::vector<double> values;

    void validate() const {
        const std::size_t n = actions.size();
        if (static_cast<std::size_t>(states.rows) != n || rewards.size() != n ||
            old_log_probs.size() != n || advantages.size() != n)
            throw std::invalid_argument("TrajectoryBatch: field lengths differ");
        for (double r : rewards)
            if (r != 1.0 && r != 0.0 && r != -1.0)
                throw std::invalid_argument("TrajectoryBatch: rewards must be in {-1, 0, +1}");
    }
};

struct PpoParams {
    double clip_lo = 0.8;
    double clip_hi = 1.2;
    double entropy_coef = 0.01;
    double lr = 0.05;
    int steps = 4;

    void validate() const {
        if (!(clip_lo < 1.0 && 1.0 < clip_hi))
            throw std::invalid_argument("PpoParams: need clip_lo < 1 < clip_hi");
        if (steps < 1) throw std::invalid_argument("PpoParams: steps must be >= 1");
    }
};

struct PpoReport {
    bool noop = false;
    std::string warning;
    double surrogate = 0.0;       // value of the clipped objective after the update
    double policy_entropy = 0.0;  // nats, after the update
};

namespace detail {

// Forward each state row as its own length-1 sequence; returns stacked logits
// (B x intents) plus per-row pooled representations for the value head.
inline std::pair<ad::Value, std::vector<ad::Value>> policy_logits(
    ad::Tape& tape, const Tensor& states, const predictor::TransformerConfig& cfg,
    const predictor::TapeParams& params) {
    std::vector<ad::Value> logit_rows;
    std::vector<ad::Value> pooled_rows;
    for (int i = 0; i < states.rows; ++i) {
        Tensor row(1, states.cols);
        for (int j = 0; j < states.cols; ++j) row(0, j) = states(i, j);
        const auto fw = predictor::build_forward(tape, tape.constant(row), cfg, params);
        logit_rows.push_back(fw.logits);
        pooled_rows.push_back(fw.pooled);
    }
    return {tape.concat_rows(logit_rows), std::move(pooled_rows)};
}

}  // namespace detail

// Gradient ascent on the clipped surrogate plus entropy bonus. A batch where
// a single action repeats with all-zero advantages carries no usable signal
// and is skipped with a warning.
inline PpoReport ppo_update(const TrajectoryBatch& batch, const predictor::TransformerConfig& cfg,
                            ParamSet& policy, const PpoParams& pp) {
    batch.validate();
    pp.validate();
    if (batch.actions.empty()) throw std::invalid_argument("ppo_update: empty batch");

    PpoReport report;
    const bool all_zero_adv = std::all_of(batch.advantages.begin(), batch.advantages.end(),
                                          [](double a) { return a == 0.0; });
    const bool single_action = std::all_of(batch.actions.begin(), batch.actions.end(),
                                           [&](int a) { return a == batch.actions.front(); });
    if (all_zero_adv && single_action) {
        report.noop = true;
        report.warning = "degenerate batch (single repeated action, zero advantages); no update";
        return report;
    }

    const int B = static_cast<int>(batch.actions.size());
    Tensor adv_col(B, 1), oldlp_col(B, 1);
    for (int i = 0; i < B; ++i) {
        adv_col(i, 0) = batch.advantages[static_cast<std::size_t>(i)];
        oldlp_col(i, 0) = batch.old_log_probs[static_cast<std::size_t>(i)];
    }

    for (int step = 0; step < pp.steps; ++step) {
        ad::Tape tape;
        predictor::TapeParams params = predictor::TapeParams::push_all(tape, policy);
        auto [logits, pooled] = detail::policy_logits(tape, batch.states, cfg, params);
        ad::Value logsm = tape.row_log_softmax(logits);
        ad::Value logp = tape.pick_cols(logsm, batch.actions);
        ad::Value ratio = tape.exp_(tape.sub(logp, tape.constant(oldlp_col)));
        ad::Value adv = tape.constant(adv_col);
        ad::Value surr = tape.min_(tape.mul(ratio, adv),
                                   tape.mul(tape.clamp_(ratio, pp.clip_lo, pp.clip_hi), adv));
        ad::Value surr_mean = tape.scale(tape.sum_all(surr), 1.0 / B);
        // H(pi) = -sum p log p, averaged over the batch.
        ad::Value probs = tape.row_softmax(logits);
        ad::Value ent = tape.scale(tape.sum_all(tape.mul(probs, logsm)), -1.0 / B);
        ad::Value objective = tape.add(surr_mean, tape.scale(ent, pp.entropy_coef));
        ad::Value loss = tape.scale(objective, -1.0);
        tape.backward(loss);
        for (auto& [name, v] : params.ordered) {
            Tensor& t = policy.at(name);
            axpy(-pp.lr, tape.grad(v), t);
        }
        report.surrogate = tape.val(surr_mean)(0, 0);
        report.policy_entropy = tape.val(ent)(0, 0);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Adaptation loop
// ---------------------------------------------------------------------------

struct AdaptationConfig {
    int epochs = 20;
    int steps_per_epoch = 250;
    double gamma = 0.99;
    double lam = 0.95;
    PpoParams ppo;
    double value_lr = 0.05;
};

struct EpochStats {
    int epoch = 0;
    double mean_reward = 0.0;
    double accept_rate = 0.0;
    double policy_entropy = 0.0;  // nats, behavior policy during collection
};

struct AdaptationReport {
    std::vector<EpochStats> epochs;
};

// Policy state: the context-channel features of the frame at each decision
// tick (time encoding + location/usage one-hots). The scenario drives one
// decision per intent segment.
inline Tensor context_state(const signals::SignalFrame& frame, const signals::ScenarioConfig& sc,
                            int time_dims = 16) {
    std::vector<double> feat;
    const auto enc = preprocess::encode_time(frame.context.time_index, time_dims);
    feat.insert(feat.end(), enc.values.begin(), enc.values.end());
    preprocess::append_one_hot(feat, frame.context.location_id, sc.context.location_vocab);
    preprocess::append_one_hot(feat, frame.context.usage_id, sc.context.usage_vocab);
    return Tensor::row(std::move(feat));
}

inline int context_state_dim(const signals::ScenarioConfig& sc, int time_dims = 16) {
    return time_dims + sc.context.location_vocab + sc.context.usage_vocab;
}

// Simulates episodes, queries the user model for feedback, runs one PPO
// update per epoch batch and trains the value head by squared error.
inline AdaptationReport run_adaptation(const signals::ScenarioConfig& scenario,
                                       const predictor::TransformerConfig& cfg, ParamSet& policy,
                                       const UserModel& user, const AdaptationConfig& ac,
                                       std::uint64_t seed) {
    scenario.validate();
    cfg.validate();
    AdaptationReport report;
    rng::Stream rollout_root(seed, "rollout");

    for (int epoch = 0; epoch < ac.epochs; ++epoch) {
        signals::ScenarioConfig sc = scenario;
        sc.seed = rng::Stream(seed, "rollout/episode").child(static_cast<std::uint64_t>(epoch))
                      .next_u64();
        sc.duration_ticks = static_cast<std::int64_t>(ac.steps_per_epoch) * sc.intent_hold_ticks;
        sc.keep_clean = false;
        const signals::EpisodeTrace ep = signals::gen_episode(sc);

        rng::Stream act = rollout_root.child(static_cast<std::uint64_t>(epoch) * 2 + 1);
        TrajectoryBatch batch;
        batch.states = Tensor(ac.steps_per_epoch, context_state_dim(sc));
        double reward_sum = 0.0;
        int accepted = 0;
        double entropy_sum = 0.0;

        for (int step = 0; step < ac.steps_per_epoch; ++step) {
            const std::int64_t tick = static_cast<std::int64_t>(step) * sc.intent_hold_ticks;
            const auto& frame = ep.frames[static_cast<std::size_t>(tick)];
            const int true_intent = ep.intents[static_cast<std::size_t>(tick)];
            const Tensor state = context_state(frame, sc);
            for (int j = 0; j < state.cols; ++j) batch.states(step, j) = state(0, j);

            const std::vector<double> logits = predictor::transformer_forward(state, cfg, policy);
            const std::vector<double> probs = predictor::softmax_vec(logits);
            const int action = act.categorical(probs);
            for (double p : probs)
                if (p > 0.0) entropy_sum -= p * std::log(p);

            const FeedbackEvent ev = user.feedback(action, true_intent, act);
            const double r = reward(action, ev);
            reward_sum += r;
            if (ev.outcome == Outcome::accepted) ++accepted;

            batch.actions.push_back(action);
            batch.rewards.push_back(r);
            batch.old_log_probs.push_back(
                std::log(std::max(probs[static_cast<std::size_t>(action)], 1e-300)));
        }

        // Value estimates from the value head; each decision is its own
        // one-step episode, so GAE reduces to r - V per step.
        batch.values.resize(static_cast<std::size_t>(ac.steps_per_epoch), 0.0);
        {
            ad::Tape tape;
            predictor::TapeParams params = predictor::TapeParams::push_all(tape, policy);
            auto [logits, pooled] = detail::policy_logits(tape, batch.states, cfg, params);
            ad::Value pooled_all = tape.concat_rows(pooled);
            ad::Value values = tape.add_rowvec(tape.matmul(pooled_all, params.at("value.w")),
                                               params.at("value.b"));
            Tensor targets(ac.steps_per_epoch, 1);
            for (int i = 0; i < ac.steps_per_epoch; ++i) {
                batch.values[static_cast<std::size_t>(i)] = tape.val(values)(i, 0);
                targets(i, 0) = batch.rewards[static_cast<std::size_t>(i)];
            }
            ad::Value err = tape.sub(values, tape.constant(targets));
            ad::Value mse = tape.scale(tape.sum_all(tape.mul(err, err)), 1.0 / ac.steps_per_epoch);
            tape.backward(mse);
            axpy(-ac.value_lr, tape.grad(params.at("value.w")), policy.at("value.w"));
            axpy(-ac.value_lr, tape.grad(params.at("value.b")), policy.at("value.b"));
        }

        batch.advantages.resize(static_cast<std::size_t>(ac.steps_per_epoch), 0.0);
        for (int i = 0; i < ac.steps_per_epoch; ++i) {
            // one-step episode: A = r - V
            batch.advantages[static_cast<std::size_t>(i)] =
                batch.rewards[static_cast<std::size_t>(i)] -
                batch.values[static_cast<std::size_t>(i)];
        }
        // Zero-mean plus unit-variance scaling keeps the surrogate gradient
        // scale epoch-invariant; without the scaling the loop destabilizes
        // once the accept rate saturates.
        double adv_mean = 0.0;
        for (double a : batch.advantages) adv_mean += a;
        adv_mean /= static_cast<double>(batch.advantages.size());
        double adv_var = 0.0;
        for (double& a : batch.advantages) {
            a -= adv_mean;
            adv_var += a * a;
        }
        adv_var /= static_cast<double>(batch.advantages.size());
        if (adv_var > 1e-12) {
            const double inv_sd = 1.0 / std::sqrt(adv_var);
            for (double& a : batch.advantages) a *= inv_sd;
        }

        ppo_update(batch, cfg, policy, ac.ppo);

        EpochStats st;
        st.epoch = epoch;
        st.mean_reward = reward_sum / ac.steps_per_epoch;
        st.accept_rate = static_cast<double>(accepted) / ac.steps_per_epoch;
        st.policy_entropy = entropy_sum / ac.steps_per_epoch;
        report.epochs.push_back(st);
    }
    return report;
}

inline void write_learning_curve_csv(const AdaptationReport& report, std::ostream& os) {
    os << "epoch,mean_reward,accept_rate,policy_entropy\n";
    for (const auto& e : report.epochs)
        os << e.epoch << ',' << fmt_double(e.mean_reward) << ',' << fmt_double(e.accept_rate)
           << ',' << fmt_double(e.policy_entropy) << '\n';
}

}  // namespace zia::adapt
