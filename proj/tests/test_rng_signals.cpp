#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "zia/signals.hpp"

using namespace zia;
using namespace zia::signals;

TEST_CASE("laplace samples match the analytic moments") {
    const auto s = sample_laplacian({2.0}, 1000000, 12345);
    double mean = 0.0;
    for (double x : s) mean += x;
    mean /= static_cast<double>(s.size());
    double var = 0.0;
    for (double x : s) var += (x - mean) * (x - mean);
    var /= static_cast<double>(s.size());
    CHECK(std::abs(var - 8.0) / 8.0 < 0.02);  // Var = 2 b^2

    const auto t = sample_laplacian({0.12}, 1000000, 999);
    double m2 = 0.0;
    for (double x : t) m2 += x;
    m2 /= static_cast<double>(t.size());
    CHECK(std::abs(m2) < 0.001);
}

TEST_CASE("laplace sampling is deterministic in (spec, count, seed)") {
    const auto a = sample_laplacian({1.5}, 1000, 42);
    const auto b = sample_laplacian({1.5}, 1000, 42);
    CHECK(a == b);
    const auto c = sample_laplacian({1.5}, 1000, 43);
    CHECK(a != c);
}

TEST_CASE("laplace median absolute deviation approaches scale*ln2") {
    for (const double b : {0.12, 2.0, 5.0}) {
        auto s = sample_laplacian({b}, 1000000, 7);
        for (double& x : s) x = std::abs(x);
        std::nth_element(s.begin(), s.begin() + s.size() / 2, s.end());
        const double mad = s[s.size() / 2];
        CHECK(std::abs(mad - b * std::log(2.0)) / (b * std::log(2.0)) < 0.03);
    }
}

TEST_CASE("laplace sampler rejects non-positive scale") {
    CHECK_THROWS_AS(sample_laplacian({0.0}, 10, 1), ConfigError);
    CHECK_THROWS_AS(sample_laplacian({-1.0}, 10, 1), ConfigError);
    CHECK_THROWS_AS(sample_laplacian({1.0}, 0, 1), std::invalid_argument);
}

TEST_CASE("spectral density closed form") {
    CHECK(spectral_density(0.12, 0.0) == Catch::Approx(2.0));
    CHECK(spectral_density(5.0, 0.0) == Catch::Approx(2.0));
    CHECK(spectral_density(0.12, 1.0) == Catch::Approx(7.2925e-4).epsilon(1e-3));
}

TEST_CASE("spectral density is non-increasing in frequency") {
    for (const double b : {0.12, 2.0, 5.0}) {
        double prev = spectral_density(b, 0.0);
        for (double f = 0.25; f <= 60.0; f += 0.25) {
            const double cur = spectral_density(b, f);
            CHECK(cur <= prev + 1e-15);
            prev = cur;
        }
    }
}

namespace {
ScenarioConfig small_scenario(int intents = 4) {
    ScenarioConfig sc;
    sc.intent_count = intents;
    sc.transition_matrix = sticky_transition(intents, 0.7);
    sc.eeg_channels = 4;
    sc.templates = build_templates(intents, {}, sc.context);
    sc.duration_ticks = 2048;
    sc.intent_hold_ticks = 64;
    sc.seed = 11;
    return sc;
}
}  // namespace

TEST_CASE("zero noise scales make frames equal clean templates exactly") {
    ScenarioConfig sc = small_scenario();
    sc.noise.gaze = sc.noise.heart = sc.noise.eeg = 0.0;
    const EpisodeTrace ep = gen_episode(sc);
    REQUIRE(ep.frames.size() == ep.clean.size());
    for (std::size_t t = 0; t < ep.frames.size(); ++t) {
        CHECK(ep.frames[t].gaze_x == ep.clean[t].gaze_x);
        CHECK(ep.frames[t].gaze_y == ep.clean[t].gaze_y);
        CHECK(ep.frames[t].heart == ep.clean[t].heart);
        CHECK(ep.frames[t].eeg == ep.clean[t].eeg);
    }
}

TEST_CASE("identity transition matrix freezes the intent") {
    ScenarioConfig sc = small_scenario();
    sc.transition_matrix = identity_transition(sc.intent_count);
    sc.initial_distribution = {0.0, 0.0, 0.0, 1.0};
    const EpisodeTrace ep = gen_episode(sc);
    for (int i : ep.intents) CHECK(i == 3);
}

TEST_CASE("episode generation is bit-identical for identical config") {
    const ScenarioConfig sc = small_scenario();
    const EpisodeTrace a = gen_episode(sc);
    const EpisodeTrace b = gen_episode(sc);
    REQUIRE(a.frames.size() == b.frames.size());
    CHECK(a.intents == b.intents);
    for (std::size_t t = 0; t < a.frames.size(); ++t) {
        CHECK(a.frames[t].gaze_x == b.frames[t].gaze_x);
        CHECK(a.frames[t].eeg == b.frames[t].eeg);
        CHECK(a.frames[t].context.location_id == b.frames[t].context.location_id);
    }
}

TEST_CASE("empirical transition frequencies converge to the matrix rows") {
    ScenarioConfig sc;
    sc.intent_count = 10;
    sc.transition_matrix = sticky_transition(10, 0.9);
    sc.eeg_channels = 4;
    sc.templates = build_templates(10, {}, sc.context);
    sc.duration_ticks = 200000;
    sc.intent_hold_ticks = 1;  // one transition per tick
    sc.rates = Rates{1.0, 1.0, 1.0, 1.0};  // keep generation cheap
    sc.keep_clean = false;
    sc.seed = 2024;
    const EpisodeTrace ep = gen_episode(sc);

    for (int i : ep.intents) {
        CHECK(i >= 0);
        CHECK(i < 10);
    }
    std::vector<std::vector<double>> counts(10, std::vector<double>(10, 0.0));
    std::vector<double> totals(10, 0.0);
    for (std::size_t t = 1; t < ep.intents.size(); ++t) {
        counts[static_cast<std::size_t>(ep.intents[t - 1])]
              [static_cast<std::size_t>(ep.intents[t])] += 1.0;
        totals[static_cast<std::size_t>(ep.intents[t - 1])] += 1.0;
    }
    for (int r = 0; r < 10; ++r) {
        REQUIRE(totals[static_cast<std::size_t>(r)] > 0);
        double l1 = 0.0;
        for (int c = 0; c < 10; ++c)
            l1 += std::abs(counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] /
                               totals[static_cast<std::size_t>(r)] -
                           sc.transition_matrix[static_cast<std::size_t>(r)]
                                               [static_cast<std::size_t>(c)]);
        CHECK(l1 < 0.02);
    }
}

TEST_CASE("chain is first-order Markov: second-order history adds nothing") {
    ScenarioConfig sc;
    sc.intent_count = 3;
    sc.transition_matrix = sticky_transition(3, 0.6);
    sc.eeg_channels = 4;
    sc.templates = build_templates(3, {}, sc.context);
    sc.duration_ticks = 300000;
    sc.intent_hold_ticks = 1;
    sc.rates = Rates{1.0, 1.0, 1.0, 1.0};
    sc.keep_clean = false;
    sc.seed = 5;
    const EpisodeTrace ep = gen_episode(sc);

    // Compare P(i_t | i_{t-1}) with P(i_t | i_{t-1}, i_{t-2}) for every
    // well-populated history pair.
    std::map<std::pair<int, int>, std::vector<double>> second;
    std::map<int, std::vector<double>> first;
    for (std::size_t t = 2; t < ep.intents.size(); ++t) {
        auto& s = second[{ep.intents[t - 2], ep.intents[t - 1]}];
        s.resize(3, 0.0);
        s[static_cast<std::size_t>(ep.intents[t])] += 1.0;
        auto& f = first[ep.intents[t - 1]];
        f.resize(3, 0.0);
        f[static_cast<std::size_t>(ep.intents[t])] += 1.0;
    }
    for (auto& [hist, cnt] : second) {
        double n2 = cnt[0] + cnt[1] + cnt[2];
        if (n2 < 5000) continue;
        const auto& f = first[hist.second];
        const double n1 = f[0] + f[1] + f[2];
        for (int c = 0; c < 3; ++c) {
            const double p2 = cnt[static_cast<std::size_t>(c)] / n2;
            const double p1 = f[static_cast<std::size_t>(c)] / n1;
            CHECK(std::abs(p2 - p1) < 0.03);  // sampling-error tolerance, fixed seed
        }
    }
}

TEST_CASE("per-modality residuals pass the Laplace MAD scale check") {
    ScenarioConfig sc = small_scenario();
    sc.duration_ticks = 65536;
    sc.noise.eeg = 5.0;
    const EpisodeTrace ep = gen_episode(sc);
    std::vector<double> resid;
    for (std::size_t t = 0; t < ep.frames.size(); ++t) {
        if (!ep.frames[t].fresh_eeg) continue;
        for (std::size_t c = 0; c < ep.frames[t].eeg.size(); ++c)
            resid.push_back(std::abs(ep.frames[t].eeg[c] - ep.clean[t].eeg[c]));
    }
    REQUIRE(resid.size() > 100000);
    std::nth_element(resid.begin(), resid.begin() + resid.size() / 2, resid.end());
    const double mad = resid[resid.size() / 2];
    const double expect = 5.0 * std::log(2.0);
    CHECK(std::abs(mad - expect) / expect < 0.03);
}

TEST_CASE("missing template is a configuration error") {
    ScenarioConfig sc = small_scenario();
    sc.templates.resize(2);
    CHECK_THROWS_AS(gen_episode(sc), ConfigError);
}

TEST_CASE("invalid transition rows are rejected") {
    ScenarioConfig sc = small_scenario();
    sc.transition_matrix[1][1] += 0.1;
    CHECK_THROWS_AS(sc.validate(), ConfigError);
}

TEST_CASE("episode csv layout matches the documented schema") {
    ScenarioConfig sc = small_scenario();
    sc.duration_ticks = 16;
    const EpisodeTrace ep = gen_episode(sc);
    std::ostringstream os;
    write_episode_csv(ep, os);
    std::istringstream is(os.str());
    std::string header;
    std::getline(is, header);
    CHECK(header ==
          "t,intent,gaze_x,gaze_y,heart,eeg_0,eeg_1,eeg_2,eeg_3,time_index,location_id,usage_id");
    int rows = 0;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 16);
}

TEST_CASE("achieved snr is reported, a positive finite value for noisy templates") {
    ScenarioConfig sc = small_scenario();
    sc.duration_ticks = 16384;
    const EpisodeTrace ep = gen_episode(sc);
    const AchievedSnr snr = achieved_snr(ep);
    CHECK(std::isfinite(snr.eeg_db));
    CHECK(snr.eeg_db > 0.0);  // amp 20 tone vs b=5 noise
    CHECK(std::isfinite(snr.gaze_db));
}

TEST_CASE("context categorical strength one is deterministic per intent") {
    ScenarioConfig sc = small_scenario();
    sc.context.strength = 1.0;
    sc.templates = build_templates(sc.intent_count, {}, sc.context);
    const EpisodeTrace ep = gen_episode(sc);
    for (std::size_t t = 0; t < ep.frames.size(); ++t) {
        const auto& tpl = sc.templates[static_cast<std::size_t>(ep.intents[t])];
        if (ep.frames[t].fresh_context)
            CHECK(ep.frames[t].context.location_id == tpl.preferred_location);
    }
}
