// Acceptance suite: prints one pass/fail line per criterion and exits
// nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "zia/zia.hpp"

namespace fs = std::filesystem;
using namespace zia;

namespace {

struct Checker {
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

struct Criterion {
    int id;
    std::string name;
    std::function<void(Checker&)> fn;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) return "<missing " + p.string() + ">";
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

bool dirs_byte_identical(const fs::path& a, const fs::path& b, std::string& why) {
    std::vector<fs::path> files_a;
    for (const auto& e : fs::directory_iterator(a))
        if (e.is_regular_file()) files_a.push_back(e.path().filename());
    std::sort(files_a.begin(), files_a.end());
    for (const auto& name : files_a) {
        if (!fs::exists(b / name)) {
            why = name.string() + " missing from second run";
            return false;
        }
        if (slurp(a / name) != slurp(b / name)) {
            why = name.string() + " differs between runs";
            return false;
        }
    }
    return true;
}

fs::path tmp_dir(const std::string& leaf) {
    return fs::temp_directory_path() / ("zia_acceptance_" + leaf);
}

experiment::RunResult run_preset_to(const std::string& preset, const fs::path& out) {
    nlohmann::json j = experiment::load_preset(preset);
    j["output_dir"] = out.string();
    return experiment::run_from_json(j);
}

// --------------------------------------------------------------------------

void criterion_latency(Checker& c) {
    const edgecost::CostProfile cpu{"cpu", 2.84e9, 2.0, 0.010, 1.5e-9};
    const double t1 = edgecost::latency_s(1e8, cpu);
    const double expect1 = 1e8 * 2.0 / 2.84e9 + 0.010;
    c.require(std::abs(t1 - expect1) / expect1 < 1e-9, "latency(1e8) != closed form");
    c.require(std::abs(t1 * 1e3 - 80.42) < 0.005, "latency(1e8) not 80.42 ms");
    c.require(t1 * 1e3 >= 80.0 && t1 * 1e3 <= 90.0, "latency(1e8) outside 80-90 ms band");

    const double t2 = edgecost::latency_s(5e7, cpu);
    const double expect2 = 5e7 * 2.0 / 2.84e9 + 0.010;
    c.require(std::abs(t2 - expect2) / expect2 < 1e-9, "latency(5e7) != closed form");
    c.require(std::abs(t2 * 1e3 - 45.21) < 0.005, "latency(5e7) not 45.21 ms");
    c.require(t2 * 1e3 >= 45.0 && t2 * 1e3 <= 55.0, "latency(5e7) outside 45-55 ms band");
}

void criterion_power(Checker& c) {
    const double p = edgecost::power_w(1e8, 1.5e-9, 0.090);
    const double expect = 1e8 * 1.5e-9 / 0.090;
    c.require(std::abs(p - expect) / expect < 1e-9, "power formula mismatch");
    c.require(std::abs(p - 1.6666667) < 1e-6, "power(1e8,1.5nJ,90ms) not 1.667 W");
    report::DiscrepancyLog log;
    const bool inside = log.add("power(cpu,softmax)", p * 1e3, report::Band{110.0, 130.0, "mW"},
                                "formula output vs quoted band");
    c.require(!inside, "discrepancy flag must be set against the 110-130 mW band");
    c.require(log.mismatches() == 1, "discrepancy log must record the mismatch");
}

void criterion_quantization(Checker& c) {
    rng::Stream g(20260810, "acceptance/quant");
    const int n = 1000000;
    double max_err = 0.0;
    std::int64_t violations = 0;
    Tensor w(1, n);
    for (auto& x : w.v) x = g.uniform(-0.99, 0.99);
    const edgecost::QuantizedTensor q = edgecost::quantize(w);
    const Tensor back = q.dequantize();
    const double bound = 0.00390625;  // 2^-8
    for (int i = 0; i < n; ++i) {
        const double err = std::abs(w.v[static_cast<std::size_t>(i)] -
                                    back.v[static_cast<std::size_t>(i)]);
        max_err = std::max(max_err, err);
        if (err >= bound) ++violations;
    }
    c.require(violations == 0, "round-trip violations: " + std::to_string(violations));
    c.require(max_err < bound, "max error " + fmt_double(max_err) + " not < 2^-8");
    c.require(q.saturated == 0, "unexpected saturation inside [-0.99, 0.99]");
}

double brute_dtw(const std::vector<int>& a, const std::vector<int>& b, int i, int j) {
    const double d = static_cast<double>(a[static_cast<std::size_t>(i)] -
                                         b[static_cast<std::size_t>(j)]);
    const double local = d * d;
    if (i == 0 && j == 0) return local;
    double best = std::numeric_limits<double>::infinity();
    if (i > 0 && j > 0) best = std::min(best, brute_dtw(a, b, i - 1, j - 1));
    if (i > 0) best = std::min(best, brute_dtw(a, b, i - 1, j));
    if (j > 0) best = std::min(best, brute_dtw(a, b, i, j - 1));
    return local + best;
}

void criterion_dtw(Checker& c) {
    // Every sequence over {0,1,2} with length 1..5, both sides: exact
    // agreement with exhaustive monotone-path enumeration.
    std::vector<std::vector<int>> all;
    for (int len = 1; len <= 5; ++len) {
        std::vector<int> seq(static_cast<std::size_t>(len), 0);
        while (true) {
            all.push_back(seq);
            int pos = len - 1;
            while (pos >= 0 && seq[static_cast<std::size_t>(pos)] == 2) {
                seq[static_cast<std::size_t>(pos)] = 0;
                --pos;
            }
            if (pos < 0) break;
            ++seq[static_cast<std::size_t>(pos)];
        }
    }
    std::int64_t mismatches = 0;
    std::int64_t checked = 0;
    for (const auto& sa : all) {
        Tensor ta(static_cast<int>(sa.size()), 1);
        for (std::size_t i = 0; i < sa.size(); ++i) ta(static_cast<int>(i), 0) = sa[i];
        for (const auto& sb : all) {
            Tensor tb(static_cast<int>(sb.size()), 1);
            for (std::size_t i = 0; i < sb.size(); ++i) tb(static_cast<int>(i), 0) = sb[i];
            const double fast = fusion::dtw_align(ta, tb).cost;
            const double brute = brute_dtw(sa, sb, static_cast<int>(sa.size()) - 1,
                                           static_cast<int>(sb.size()) - 1);
            if (fast != brute) ++mismatches;
            ++checked;
        }
    }
    c.require(mismatches == 0, std::to_string(mismatches) + " mismatches over " +
                                   std::to_string(checked) + " pairs");
    c.detail = std::to_string(checked) + " pairs checked";
}

void criterion_attention(Checker& c) {
    rng::Stream g(77, "acceptance/attn");
    // Row-stochasticity on 1000 random instances.
    int bad_rows = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const int n = 1 + g.uniform_int(10);
        const int m = 1 + g.uniform_int(10);
        const int d = 1 + g.uniform_int(24);
        Tensor q = random_normal(n, d, 2.0, g);
        Tensor k = random_normal(m, d, 2.0, g);
        Tensor v = random_normal(m, 4, 1.0, g);
        Tensor weights;
        attn::softmax_attention(q, k, v, 1.0 / std::sqrt(static_cast<double>(d)), nullptr,
                                &weights);
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < m; ++j) s += weights(i, j);
            if (std::abs(s - 1.0) > 1e-6) ++bad_rows;
        }
    }
    c.require(bad_rows == 0, std::to_string(bad_rows) + " non-stochastic rows");

    // Single-token identity is exact.
    Tensor q1 = random_normal(1, 8, 1.0, g);
    Tensor k1 = random_normal(1, 8, 1.0, g);
    Tensor v1 = random_normal(1, 8, 1.0, g);
    const Tensor out1 = attn::softmax_attention(q1, k1, v1, 0.35);
    bool exact = true;
    for (int j = 0; j < 8; ++j)
        if (out1(0, j) != v1(0, j)) exact = false;
    c.require(exact, "single-token attention not bit-exact");

    // Counted ops: linear in N for the linear kernel, quadratic for softmax.
    const int dh = 16;
    std::vector<int> ns = {32, 64, 128, 256};
    std::vector<std::uint64_t> lin_macs, soft_macs;
    for (const int n : ns) {
        Tensor q = random_normal(n, dh, 1.0, g);
        Tensor k = random_normal(n, dh, 1.0, g);
        Tensor v = random_normal(n, dh, 1.0, g);
        attn::OpCounter lc, sc;
        attn::linear_attention(q, k, v, true, &lc);
        attn::softmax_attention(q, k, v, 0.25, &sc);
        lin_macs.push_back(lc.macs);
        soft_macs.push_back(sc.macs);
    }
    for (std::size_t i = 1; i < ns.size(); ++i) {
        const double n_ratio = static_cast<double>(ns[i]) / ns[0];
        const double lin_ratio = static_cast<double>(lin_macs[i]) / lin_macs[0];
        const double soft_ratio = static_cast<double>(soft_macs[i]) / soft_macs[0];
        c.require(std::abs(lin_ratio / n_ratio - 1.0) < 0.05,
                  "linear kernel ops not linear in N");
        c.require(std::abs(soft_ratio / (n_ratio * n_ratio) - 1.0) < 0.05,
                  "softmax kernel ops not quadratic in N");
    }
}

double fd_worst_error(std::vector<Tensor> params,
                      const std::function<ad::Value(ad::Tape&, std::vector<ad::Value>&)>& build) {
    ad::Tape tape;
    std::vector<ad::Value> vals;
    for (const Tensor& p : params) vals.push_back(tape.param(p));
    tape.backward(build(tape, vals));
    const auto eval = [&](const std::vector<Tensor>& ps) {
        ad::Tape t2;
        std::vector<ad::Value> vs;
        for (const Tensor& p : ps) vs.push_back(t2.param(p));
        return t2.val(build(t2, vs))(0, 0);
    };
    // Balances truncation against roundoff on small gradient components.
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (int i = 0; i < params[pi].size(); ++i) {
            std::vector<Tensor> plus = params, minus = params;
            plus[pi].v[static_cast<std::size_t>(i)] += h;
            minus[pi].v[static_cast<std::size_t>(i)] -= h;
            const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
            const double an = tape.grad(vals[pi]).v[static_cast<std::size_t>(i)];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

void criterion_gradients(Checker& c) {
    rng::Stream g(88, "acceptance/grad");
    // Contrastive loss.
    const Tensor anchors = random_normal(4, 8, 1.0, g);
    const Tensor cands = random_normal(6, 8, 1.0, g);
    const std::vector<std::pair<int, int>> pairs = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    const double e1 = fd_worst_error({anchors, cands}, [&](ad::Tape& t, std::vector<ad::Value>& v) {
        return fusion::contrastive_loss_tape(t, v[0], v[1], pairs, 0.1);
    });
    c.require(e1 < 1e-4, "contrastive grad rel err " + fmt_double(e1));

    // Reduced transformer cross-entropy (softmax kernel, 2 layers, d=16, N=4).
    predictor::TransformerConfig cfg;
    cfg.layers = 2;
    cfg.model_dim = 16;
    cfg.heads = 2;
    cfg.ffn_dim = 24;
    cfg.sequence_len = 4;
    cfg.intent_count = 3;
    cfg.input_dim = 8;
    ParamSet weights = predictor::init_transformer_weights(cfg, g);
    const Tensor z = random_normal(4, 8, 1.0, g);
    std::vector<Tensor> params;
    std::vector<std::string> names;
    for (const auto& [name, t] : weights.entries) {
        if (name.find("_rho") != std::string::npos || name.rfind("value.", 0) == 0) continue;
        params.push_back(t);
        names.push_back(name);
    }
    const double e2 = fd_worst_error(params, [&](ad::Tape& t, std::vector<ad::Value>& v) {
        predictor::TapeParams tp;
        for (std::size_t i = 0; i < names.size(); ++i) {
            tp.by_name.emplace(names[i], v[i]);
            tp.ordered.emplace_back(names[i], v[i]);
        }
        const auto fw = predictor::build_forward(t, t.constant(z), cfg, tp);
        return t.pick_nll(t.row_log_softmax(fw.logits), {2});
    });
    c.require(e2 < 1e-4, "transformer grad rel err " + fmt_double(e2));
    c.detail = "contrastive " + fmt_double(e1) + ", transformer " + fmt_double(e2);
}

void criterion_mi(Checker& c) {
    rng::Stream g(99, "acceptance/mi");
    int violations = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        std::vector<double> table(10 * 4 * 4);
        double sum = 0.0;
        for (auto& x : table) {
            x = -std::log(g.uniform01());
            sum += x;
        }
        for (auto& x : table) x /= sum;
        const auto jab = info::DiscreteJoint::from_table({10, 4, 4}, table);
        const auto ja = jab.marginal({0, 1});
        // Exact inequality up to float rounding (1e-12 guard).
        if (info::mutual_information_bits(jab) < info::mutual_information_bits(ja) - 1e-12)
            ++violations;
    }
    c.require(violations == 0, std::to_string(violations) + " monotonicity violations");

    std::vector<double> uniform10(10, 0.1);
    const double h = info::entropy_bits(uniform10);
    c.require(std::abs(h - 3.3219280948873623) < 1e-6,
              "entropy(uniform-10) = " + fmt_double(h));
}

fs::path g_ladder_dir;  // shared between criteria 8 and 11

void criterion_learning(Checker& c) {
    g_ladder_dir = tmp_dir("ladder_a");
    const auto res = run_preset_to("modality-ladder", g_ladder_dir);
    const double gaze = res.summary.at("gaze_test_accuracy_pct").get<double>();
    const double full = res.summary.at("full_test_accuracy_pct").get<double>();
    c.require(gaze >= 70.0, "gaze-only accuracy " + fmt_fixed(gaze, 2) + "% < 70%");
    c.require(full >= gaze + 5.0, "full accuracy " + fmt_fixed(full, 2) +
                                      "% not >= gaze + 5pts (" + fmt_fixed(gaze, 2) + "%)");

    // The bundle's MI ladder must be non-decreasing down the modality ladder.
    {
        std::istringstream mi(slurp(g_ladder_dir / "mi.csv"));
        std::string line;
        std::getline(mi, line);  // header
        double prev = -1.0;
        int rows = 0;
        while (std::getline(mi, line)) {
            if (line.empty()) continue;
            // mi_bits is the 5th column
            std::stringstream ss(line);
            std::string cell;
            for (int i = 0; i < 5; ++i) std::getline(ss, cell, ',');
            const double mi_bits = std::stod(cell);
            c.require(mi_bits >= prev - 1e-9, "mi ladder decreases at row " + line);
            prev = mi_bits;
            ++rows;
        }
        c.require(rows == 4, "mi ladder expected 4 rows");
    }
    // The known accuracy-mapping inconsistency is logged whenever this
    // computation runs.
    c.require(slurp(g_ladder_dir / "discrepancies.csv").find("accuracy_mapping") !=
                  std::string::npos,
              "accuracy_mapping discrepancy entry missing");
    c.detail = "gaze " + fmt_fixed(gaze, 2) + "%, full " + fmt_fixed(full, 2) + "%";
}

fs::path g_bandit_dir;

void criterion_ppo(Checker& c) {
    g_bandit_dir = tmp_dir("bandit_a");
    const auto res = run_preset_to("adaptation-bandit", g_bandit_dir);
    const double accept = res.summary.at("final_accept_rate").get<double>();
    c.require(accept > 0.90, "final accept rate " + fmt_fixed(accept, 4) + " <= 0.90");
    c.detail = "final accept rate " + fmt_fixed(accept, 4) + " after 5000 steps";
}

void criterion_variational(Checker& c) {
    const Tensor mu0 = Tensor::zeros(4, 3);
    const Tensor sig1 = Tensor::full(4, 3, 1.0);
    c.require(std::abs(predictor::kl_gaussian(mu0, sig1)) < 1e-9, "KL at prior not 0");
    const Tensor mu1(1, 1, {1.0});
    const Tensor s1(1, 1, {1.0});
    c.require(std::abs(predictor::kl_gaussian(mu1, s1) - 0.5) < 1e-9, "KL(1,1) not 0.5");

    // Monte Carlo probability variance ~ 1/samples: log-log slope in [-1.2, -0.8].
    rng::Stream g(111, "acceptance/vb");
    predictor::TransformerConfig cfg;
    cfg.layers = 1;
    cfg.model_dim = 16;
    cfg.heads = 2;
    cfg.ffn_dim = 32;
    cfg.sequence_len = 2;
    cfg.intent_count = 5;
    cfg.input_dim = 8;
    ParamSet w = predictor::init_transformer_weights(cfg, g);
    const double rho = std::log(std::expm1(0.5));
    w.at("head.w_rho").fill(rho);
    w.at("head.b_rho").fill(rho);
    const Tensor z = random_normal(2, 8, 1.0, g);
    const std::vector<int> counts = {1, 4, 16, 64};
    const int repeats = 200;
    std::vector<double> log_var;
    for (const int s : counts) {
        double mean = 0.0, m2 = 0.0;
        for (int r = 0; r < repeats; ++r) {
            const auto pred = predictor::variational_predict(
                z, cfg, w, s, 0.0, 31000 + static_cast<std::uint64_t>(r) * 613 + s);
            mean += pred.dist.probs[0];
            m2 += pred.dist.probs[0] * pred.dist.probs[0];
        }
        mean /= repeats;
        log_var.push_back(std::log(m2 / repeats - mean * mean));
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double x = std::log(static_cast<double>(counts[i]));
        sx += x;
        sy += log_var[i];
        sxx += x * x;
        sxy += x * log_var[i];
    }
    const double n = static_cast<double>(counts.size());
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    c.require(slope > -1.2 && slope < -0.8, "MC variance slope " + fmt_fixed(slope, 3));
    c.detail = "slope " + fmt_fixed(slope, 3);
}

void criterion_determinism(Checker& c) {
    struct Rerun {
        std::string preset;
        fs::path first;
    };
    std::vector<Rerun> reruns = {
        {"paper-projection", tmp_dir("paper_a")},
        {"modality-ladder", g_ladder_dir},
        {"adaptation-bandit", g_bandit_dir},
        {"noise-sensitivity", tmp_dir("noise_a")},
    };
    // Presets not already produced by earlier criteria get their first run here.
    run_preset_to("paper-projection", reruns[0].first);
    run_preset_to("noise-sensitivity", reruns[3].first);
    if (g_ladder_dir.empty()) {
        reruns[1].first = tmp_dir("ladder_a");
        run_preset_to("modality-ladder", reruns[1].first);
    }
    if (g_bandit_dir.empty()) {
        reruns[2].first = tmp_dir("bandit_a");
        run_preset_to("adaptation-bandit", reruns[2].first);
    }
    for (const auto& r : reruns) {
        const fs::path second = tmp_dir(r.preset + "_b");
        run_preset_to(r.preset, second);
        std::string why;
        const bool same = dirs_byte_identical(r.first, second, why);
        c.require(same, r.preset + ": " + why);
        fs::remove_all(second);
    }
}

}  // namespace

int main() {
    std::vector<Criterion> criteria = {
        {1, "latency reproduction (80.42 ms / 45.21 ms, in-band)", criterion_latency},
        {2, "power formula (1.667 W, flagged against the quoted mW band)", criterion_power},
        {3, "quantization round-trip bound over 1e6 weights", criterion_quantization},
        {4, "dtw equals exhaustive path enumeration (len <= 5, 3-value alphabet)", criterion_dtw},
        {5, "attention invariants and kernel op scaling", criterion_attention},
        {6, "gradient checks vs central finite differences", criterion_gradients},
        {7, "mi monotonicity on 1000 joints; entropy(uniform-10)", criterion_mi},
        {8, "desk-scale learning: gaze-only >= 70%, multi-modal >= gaze + 5pts", criterion_learning},
        {9, "ppo bandit reaches accept rate > 90% within 5000 steps", criterion_ppo},
        {10, "variational suite: exact KL values, MC variance slope", criterion_variational},
        {11, "preset determinism: re-runs are byte-identical", criterion_determinism},
    };

    int failures = 0;
    for (auto& cr : criteria) {
        Checker c;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            cr.fn(c);
        } catch (const std::exception& e) {
            c.ok = false;
            c.detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] criterion %2d: %s (%.1fs)%s%s\n", c.ok ? "PASS" : "FAIL", cr.id,
                    cr.name.c_str(), secs, c.detail.empty() ? "" : " -- ",
                    c.detail.c_str());
        std::fflush(stdout);
        if (!c.ok) ++failures;
    }
    if (failures > 0) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all %zu criteria passed\n", criteria.size());
    // Clean up bundles from the reruns.
    for (const char* leaf : {"ladder_a", "bandit_a", "paper_a", "noise_a"}) {
        std::error_code ec;
        fs::remove_all(tmp_dir(leaf), ec);
    }
    return 0;
}
