#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "zia/zia.hpp"

namespace {

using nlohmann::json;

json load_config(const std::string& config_path, const std::string& preset) {
    if (!preset.empty()) return zia::experiment::load_preset(preset);
    std::ifstream f(config_path);
    if (!f) throw std::runtime_error("cannot read config file: " + config_path);
    json j;
    f >> j;
    return j;
}

std::optional<std::string> resolve_output(const std::string& out_flag) {
    if (!out_flag.empty()) return out_flag;
    if (const char* env = std::getenv("ZIA_OUTPUT_DIR"); env != nullptr && *env != '\0')
        return std::string(env);
    return std::nullopt;
}

int cmd_run(const std::string& config_path, const std::string& preset, long long seed_override,
            const std::string& out_flag, int jobs) {
    json j = load_config(config_path, preset);
    if (seed_override >= 0) j["seed"] = static_cast<std::uint64_t>(seed_override);
    const auto res = zia::experiment::run_from_json(j, jobs, resolve_output(out_flag));
    std::cout << "report written to " << res.out_dir.string() << "\n";
    for (const auto& f : res.summary["files"]) std::cout << "  " << f.get<std::string>() << "\n";
    if (res.discrepancy_mismatches > 0)
        std::cout << res.discrepancy_mismatches
                  << " computed value(s) fall outside quoted projection bands"
                     " (see discrepancies.csv)\n";
    return 0;
}

int cmd_validate(const std::string& config_path) {
    std::ifstream f(config_path);
    if (!f) {
        std::cerr << "cannot read config file: " << config_path << "\n";
        return 3;
    }
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        std::cerr << "config is not valid JSON: " << e.what() << "\n";
        return 2;
    }
    const auto diags = zia::experiment::validate_config_json(j);
    if (diags.empty()) {
        std::cout << "config is valid\n";
        return 0;
    }
    for (const auto& d : diags) std::cout << d << "\n";
    return 2;
}

int cmd_simulate(const std::string& config_path, const std::string& preset,
                 long long seed_override, const std::string& out_file,
                 const std::string& embeddings_file) {
    json j = load_config(config_path, preset);
    if (seed_override >= 0) j["seed"] = static_cast<std::uint64_t>(seed_override);
    std::vector<std::string> diags;
    const auto cfg = zia::experiment::parse_config(j, diags);
    if (!diags.empty()) {
        for (const auto& d : diags) std::cerr << d << "\n";
        return 2;
    }
    const auto ep = zia::signals::gen_episode(cfg.scenario);
    std::ofstream out(out_file, std::ios::binary);
    if (!out) {
        std::cerr << "cannot write " << out_file << "\n";
        return 3;
    }
    zia::signals::write_episode_csv(ep, out);
    std::cout << "episode csv written to " << out_file << " (" << ep.ticks() << " ticks)\n";

    if (!embeddings_file.empty()) {
        const auto prepared = zia::pipeline::prepare_episode(ep);
        const auto scaling = zia::pipeline::FeatureScaling::from_scenario(cfg.scenario);
        zia::pipeline::FeatureDims dims;
        zia::rng::Stream g(cfg.seed, "init/inspect-encoders");
        const auto enc_g = zia::fusion::init_encoder(dims.gaze_dim(), 32, g);
        const auto enc_b = zia::fusion::init_encoder(dims.bio_dim(cfg.scenario.eeg_channels), 32, g);
        const auto enc_c = zia::fusion::init_encoder(dims.ctx_dim(cfg.scenario.context), 32, g);
        std::vector<std::int64_t> ticks;
        for (std::int64_t t = dims.warmup_ticks(); t < ep.ticks(); t += 32) ticks.push_back(t);
        const int n = static_cast<int>(ticks.size());
        zia::Tensor fg(n, dims.gaze_dim()), fb(n, dims.bio_dim(cfg.scenario.eeg_channels)),
            fc(n, dims.ctx_dim(cfg.scenario.context));
        zia::pipeline::FeatureBuilder fbld{&prepared, scaling, dims};
        for (int i = 0; i < n; ++i) {
            fbld.gaze_features(ticks[static_cast<std::size_t>(i)],
                               &fg.v[static_cast<std::size_t>(i) * fg.cols]);
            fbld.bio_features(ticks[static_cast<std::size_t>(i)],
                              &fb.v[static_cast<std::size_t>(i) * fb.cols]);
            fbld.ctx_features(ticks[static_cast<std::size_t>(i)],
                              &fc.v[static_cast<std::size_t>(i) * fc.cols]);
        }
        auto zg = zia::fusion::encode_modality(fg, enc_g, zia::fusion::Modality::gaze, ticks);
        auto zb = zia::fusion::encode_modality(fb, enc_b, zia::fusion::Modality::bio, ticks);
        auto zc = zia::fusion::encode_modality(fc, enc_c, zia::fusion::Modality::context, ticks);
        std::ofstream ef(embeddings_file, std::ios::binary);
        if (!ef) {
            std::cerr << "cannot write " << embeddings_file << "\n";
            return 3;
        }
        zia::fusion::write_embeddings_csv({&zg, &zb, &zc}, ef);
        std::cout << "embeddings csv written to " << embeddings_file << "\n";
    }
    return 0;
}

int cmd_bench(const std::vector<int>& n_values, const std::string& config_path,
              const std::string& preset, const std::string& out_file) {
    zia::predictor::TransformerConfig cfg;
    if (!config_path.empty() || !preset.empty()) {
        json j = load_config(config_path, preset);
        std::vector<std::string> diags;
        cfg = zia::experiment::parse_config(j, diags).model;
    }
    const auto rows = zia::experiment::bench_attention(n_values, cfg);
    const auto table = zia::experiment::bench_to_csv(rows);
    if (out_file.empty()) {
        std::cout << table.to_string();
    } else {
        std::ofstream f(out_file, std::ios::binary);
        if (!f) {
            std::cerr << "cannot write " << out_file << "\n";
            return 3;
        }
        f << table.to_string();
        std::cout << "benchmark csv written to " << out_file << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"zia - zero-input intent prediction experiment runner"};
    app.require_subcommand(1);

    std::string config_path, preset, out, embeddings;
    long long seed_override = -1;
    int jobs = 1;
    std::vector<int> n_values = {32, 64, 128, 256};

    auto* run = app.add_subcommand("run", "execute an experiment and write its report bundle");
    run->add_option("--config", config_path, "experiment config JSON");
    run->add_option("--preset", preset, "built-in preset name")
        ->check(CLI::IsMember(zia::experiment::preset_names()));
    run->add_option("--seed", seed_override, "seed override");
    run->add_option("--out", out, "output directory override");
    run->add_option("--jobs", jobs, "parallel episode generation")->check(CLI::PositiveNumber);

    auto* validate = app.add_subcommand("validate", "schema/invariant checks, no side effects");
    validate->add_option("--config", config_path, "experiment config JSON")->required();

    auto* simulate = app.add_subcommand("simulate", "generate one episode and write it as CSV");
    simulate->add_option("--config", config_path, "experiment config JSON");
    simulate->add_option("--preset", preset, "built-in preset name")
        ->check(CLI::IsMember(zia::experiment::preset_names()));
    simulate->add_option("--seed", seed_override, "seed override");
    simulate->add_option("--out", out, "episode CSV path")->required();
    simulate->add_option("--embeddings", embeddings, "also write per-modality embeddings CSV");

    auto* bench = app.add_subcommand("bench-attention", "counted ops and wall time per kernel");
    bench->add_option("--n", n_values, "sequence lengths");
    bench->add_option("--config", config_path, "experiment config JSON (model dims)");
    bench->add_option("--preset", preset, "built-in preset name")
        ->check(CLI::IsMember(zia::experiment::preset_names()));
    bench->add_option("--out", out, "output CSV path (stdout if omitted)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            if (config_path.empty() && preset.empty()) {
                std::cerr << "run: provide --config or --preset\n";
                return 2;
            }
            return cmd_run(config_path, preset, seed_override, out, jobs);
        }
        if (validate->parsed()) return cmd_validate(config_path);
        if (simulate->parsed()) {
            if (config_path.empty() && preset.empty()) {
                std::cerr << "simulate: provide --config or --preset\n";
                return 2;
            }
            return cmd_simulate(config_path, preset, seed_override, out, embeddings);
        }
        if (bench->parsed()) return cmd_bench(n_values, config_path, preset, out);
    } catch (const zia::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
