#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "testutil.hpp"
#include "tracker.hpp"

using namespace traceprune;

namespace {

// one-tensor model holding `n` scalar-ish values
ParamStore vector_model(int64_t n, uint64_t seed = 1) {
    ParamStore store;
    SplitMix64 rng(seed);
    store.add("w", tptest::random_tensor({n}, rng, true), true);
    return store;
}

void set_values(ParamStore& store, const std::vector<real>& values) {
    auto data = store.at("w").data();
    std::copy(values.begin(), values.end(), data.begin());
}

// independent oracle: full weighted average sum(e * p_e) / sum(e) in f64
double brute_force_weighted_average(std::span<const double> per_epoch_values) {
    double num = 0, den = 0;
    for (size_t e = 0; e < per_epoch_values.size(); ++e) {
        num += per_epoch_values[e] * static_cast<double>(e + 1);
        den += static_cast<double>(e + 1);
    }
    return num / den;
}

}  // namespace

TEST_CASE("a fresh tracker is a zero shadow at step 0") {
    ModelConfig cfg = tiny_model_config();
    cfg.vocab_size = 65;
    ParamStore model = build_model(cfg);
    TrackerState tracker(model);
    CHECK(tracker.step() == 0);
    CHECK(tracker.weight_sum() == 0.0);
    REQUIRE(tracker.shadows().size() == model.size());
    for (size_t i = 0; i < model.size(); ++i) {
        CHECK(tracker.shadows()[i].name == model.entries()[i].name);
        CHECK(tracker.shadows()[i].shape == model.entries()[i].tensor.shape());
        for (double v : tracker.shadows()[i].value) CHECK(v == 0.0);
    }
}

TEST_CASE("scalar history 4 then 6 averages to 16/3") {
    ParamStore model = vector_model(1);
    TrackerState tracker(model);
    set_values(model, {4});
    tracker.update(model);
    CHECK(tracker.shadows()[0].value[0] == doctest::Approx(4.0).epsilon(1e-12));
    set_values(model, {6});
    tracker.update(model);
    // (1*4 + 2*6) / (1+2)
    CHECK(tracker.shadows()[0].value[0] == doctest::Approx(16.0 / 3.0).epsilon(1e-12));
    CHECK(tracker.step() == 2);
    CHECK(tracker.weight_sum() == 3.0);
}

TEST_CASE("constant parameters stay a fixed point of the average") {
    ParamStore model = vector_model(3);
    set_values(model, {2.5, -1.25, 0.75});
    TrackerState tracker(model);
    for (int e = 0; e < 17; ++e) tracker.update(model);
    CHECK(tracker.shadows()[0].value[0] == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(tracker.shadows()[0].value[1] == doctest::Approx(-1.25).epsilon(1e-12));
    CHECK(tracker.shadows()[0].value[2] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("100 random updates on 1000 entries match the brute-force oracle") {
    const int64_t n_entries = 1000, n_steps = 100;
    ParamStore model = vector_model(n_entries);
    TrackerState tracker(model);
    SplitMix64 rng(99);
    std::vector<std::vector<double>> history(n_entries);
    for (int64_t s = 0; s < n_steps; ++s) {
        std::vector<real> values(n_entries);
        for (int64_t i = 0; i < n_entries; ++i) {
            values[i] = static_cast<real>(rng.uniform() * 2.0 - 1.0);
            history[i].push_back(static_cast<double>(values[i]));
        }
        set_values(model, values);
        tracker.update(model);
    }
    for (int64_t i = 0; i < n_entries; ++i) {
        const double want = brute_force_weighted_average(history[i]);
        const double got = tracker.shadows()[0].value[i];
        CHECK(std::abs(got - want) <= 1e-5 * std::max(1e-30, std::abs(want)));
    }
}

TEST_CASE("tracker update rejects a misaligned model") {
    ParamStore model = vector_model(4);
    TrackerState tracker(model);
    ParamStore other = vector_model(5);
    CHECK_THROWS_AS(tracker.update(other), Error);
}

TEST_CASE("replaying a saved shadow continues identically to the live run") {
    ParamStore model = vector_model(32);
    TrackerState live(model);
    SplitMix64 rng(7);
    auto randomize = [&] {
        std::vector<real> v(32);
        for (auto& x : v) x = static_cast<real>(rng.normal());
        set_values(model, v);
    };
    std::vector<TrackerState::Shadow> saved;
    int64_t saved_step = 0;
    std::vector<std::vector<real>> tail_values;
    for (int s = 0; s < 20; ++s) {
        randomize();
        if (s >= 10) {
            tail_values.emplace_back(model.at("w").data().begin(), model.at("w").data().end());
        }
        live.update(model);
        if (s == 9) {
            saved = live.shadows();
            saved_step = live.step();
        }
    }
    TrackerState replay;
    replay.restore(saved, saved_step);
    for (const auto& v : tail_values) {
        set_values(model, v);
        replay.update(model);
    }
    CHECK(replay.step() == live.step());
    for (size_t i = 0; i < 32; ++i) {
        CHECK(replay.shadows()[0].value[i] == live.shadows()[0].value[i]);
    }
}

TEST_CASE("importance_from_history matches hand-computed values") {
    // constant history
    std::vector<double> constant(9, 3.75);
    for (int64_t k = 0; k < 9; ++k) {
        CHECK(importance_from_history(constant, 9, k) == doctest::Approx(3.75).epsilon(1e-12));
    }
    // epochs 1..3 hold 4, 6, 3; k=2 covers all: (3*3 + 2*6 + 1*4) / (3+2+1)
    std::vector<double> vals = {4, 6, 3};
    CHECK(importance_from_history(vals, 3, 2) == doctest::Approx(25.0 / 6.0).epsilon(1e-12));
    // horizon errors
    CHECK_THROWS_AS(importance_from_history(vals, 3, 3), Error);
    CHECK_THROWS_AS(importance_from_history(vals, 3, -1), Error);
    CHECK_THROWS_AS(importance_from_history(vals, 4, 0), Error);
}

TEST_CASE("full-horizon importance equals the running tracker") {
    const int64_t n_steps = 64;
    ParamStore model = vector_model(1);
    TrackerState tracker(model);
    SplitMix64 rng(41);
    std::vector<double> history;
    for (int64_t s = 0; s < n_steps; ++s) {
        set_values(model, {static_cast<real>(rng.normal() * 0.3)});
        history.push_back(model.at("w").data()[0]);
        tracker.update(model);
    }
    const double via_history = importance_from_history(history, n_steps, n_steps - 1);
    const double via_tracker = tracker.shadows()[0].value[0];
    CHECK(std::abs(via_history - via_tracker) <=
          1e-5 * std::max(1e-30, std::abs(via_tracker)));
}

TEST_CASE("recency monotonicity: a later bump scores strictly higher") {
    const int64_t n = 12;
    std::vector<double> base(n, 0.5);
    double prev = -1.0;
    for (int64_t e = 0; e < n; ++e) {
        std::vector<double> h = base;
        h[e] += 2.0;  // same bump, moving later
        const double imp = importance_from_history(h, n, n - 1);
        CHECK(imp > prev);
        prev = imp;
    }
}

TEST_CASE("importance is bounded by the history extremes") {
    SplitMix64 rng(55);
    for (int it = 0; it < 50; ++it) {
        const int64_t n = 2 + static_cast<int64_t>(rng.below(30));
        std::vector<double> h(n);
        for (auto& v : h) v = rng.uniform() * 5.0;  // non-negative
        const int64_t k = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));
        const double imp = importance_from_history(h, n, k);
        const double lo = *std::min_element(h.begin(), h.end());
        const double hi = *std::max_element(h.begin(), h.end());
        CHECK(imp >= lo - 1e-12);
        CHECK(imp <= hi + 1e-12);
    }
}

TEST_CASE("importance scores are absolute shadow values over prunable entries") {
    ParamStore store;
    SplitMix64 rng(2);
    store.add("w1", tptest::random_tensor({2}, rng, true), true);
    store.add("b", tptest::random_tensor({2}, rng, true), false);
    store.add("w2", tptest::random_tensor({3}, rng, true), true);
    TrackerState tracker(store);
    CHECK_THROWS_AS(importance_scores(tracker, store), Error);  // step 0

    store.at("w1").data()[0] = real(-3.0);
    store.at("w1").data()[1] = real(0.5);
    store.at("w2").data()[0] = real(0);
    store.at("w2").data()[1] = real(-1);
    store.at("w2").data()[2] = real(2);
    tracker.update(store);
    ImportanceVector scores = importance_scores(tracker, store);
    REQUIRE(scores.size() == 5);  // bias excluded
    CHECK(scores.names == std::vector<std::string>{"w1", "w2"});
    CHECK(scores.scores[0] == doctest::Approx(3.0));
    CHECK(scores.scores[1] == doctest::Approx(0.5));
    CHECK(scores.scores[2] == doctest::Approx(0.0));
    CHECK(scores.scores[3] == doctest::Approx(1.0));
    CHECK(scores.scores[4] == doctest::Approx(2.0));
}

TEST_CASE("all-zero shadow scores zero and per-entry scores are local") {
    ParamStore store;
    SplitMix64 rng(6);
    store.add("a", tptest::random_tensor({4}, rng, true), true);
    store.add("b", tptest::random_tensor({4}, rng, true), true);
    for (real& v : store.at("a").data()) v = 0;
    for (real& v : store.at("b").data()) v = 0;
    TrackerState tracker(store);
    tracker.update(store);
    ImportanceVector scores = importance_scores(tracker, store);
    for (double s : scores.scores) CHECK(s == 0.0);

    // locality: swapping which tensor is listed first permutes blocks only
    ParamStore swapped;
    swapped.add("b", store.at("b").clone_detached(), true);
    swapped.add("a", store.at("a").clone_detached(), true);
    TrackerState tracker2(swapped);
    tracker2.update(swapped);
    ImportanceVector s2 = importance_scores(tracker2, swapped);
    CHECK(s2.scores == scores.scores);  // all zeros either way
}

TEST_CASE("trace export writes parseable bit-exact rows") {
    ParamStore model = vector_model(16, 77);
    TraceSampler sampler(model, 2, 5);
    SplitMix64 rng(10);
    for (int s = 0; s < 3; ++s) {
        std::vector<real> v(16);
        for (auto& x : v) x = static_cast<real>(rng.normal());
        set_values(model, v);
        sampler.record(model, s);
    }
    auto path = tptest::test_dir("tracker") / "traces.csv";
    sampler.write_csv(path.string());

    std::ifstream f(path);
    std::string header;
    std::getline(f, header);
    CHECK(header == "weight_id,epoch,value");
    int rows = 0;
    std::string line;
    std::vector<double> parsed;
    while (std::getline(f, line)) {
        ++rows;
        const auto last_comma = line.rfind(',');
        parsed.push_back(std::stod(line.substr(last_comma + 1)));
    }
    CHECK(rows == 2 * 3);  // 2 weights x 3 epochs
    REQUIRE(parsed.size() == 6);
}

TEST_CASE("trace export row count scales as weights x epochs") {
    ParamStore model = vector_model(64, 3);
    TraceSampler sampler(model, 10, 9);
    SplitMix64 rng(14);
    for (int s = 0; s < 100; ++s) {
        std::vector<real> v(64);
        for (auto& x : v) x = static_cast<real>(rng.normal());
        set_values(model, v);
        sampler.record(model, s);
    }
    auto path = tptest::test_dir("tracker") / "traces_many.csv";
    sampler.write_csv(path.string());
    std::ifstream f(path);
    std::string line;
    int lines = 0;
    while (std::getline(f, line)) ++lines;
    CHECK(lines == 1 + 10 * 100);
}

TEST_CASE("trace export needs at least two epochs") {
    ParamStore model = vector_model(4, 3);
    TraceSampler sampler(model, 2, 9);
    sampler.record(model, 0);
    auto path = tptest::test_dir("tracker") / "traces_short.csv";
    CHECK_THROWS_AS(sampler.write_csv(path.string()), Error);
}

TEST_CASE("trace values round-trip bit-exactly through the CSV") {
    ParamStore model = vector_model(8, 123);
    TraceSampler sampler(model, 3, 1);
    SplitMix64 rng(20);
    std::vector<std::vector<real>> logged;
    for (int s = 0; s < 4; ++s) {
        std::vector<real> v(8);
        for (auto& x : v) x = static_cast<real>(rng.normal() * 0.123456789);
        set_values(model, v);
        sampler.record(model, s);
        logged.push_back(v);
    }
    auto path = tptest::test_dir("tracker") / "traces_exact.csv";
    sampler.write_csv(path.string());
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        const auto c1 = line.find(',');
        const auto c2 = line.rfind(',');
        const std::string id = line.substr(0, c1);
        const int64_t epoch = std::stoll(line.substr(c1 + 1, c2 - c1 - 1));
        const float value = std::stof(line.substr(c2 + 1));
        const int64_t flat = std::stoll(id.substr(id.find(':') + 1));
        CHECK(value == static_cast<float>(logged[epoch - 1][flat]));
    }
}

TEST_CASE("tracker handles 100 random trajectories inside the time budget") {
    const auto start = std::chrono::steady_clock::now();
    SplitMix64 rng(2024);
    for (int traj = 0; traj < 10; ++traj) {  // the acceptance suite runs all 100
        ParamStore model = vector_model(1000, 1000 + traj);
        TrackerState tracker(model);
        for (int s = 0; s < 100; ++s) {
            for (real& v : model.at("w").data()) v = static_cast<real>(rng.uniform());
            tracker.update(model);
        }
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(secs < 5.0);
}
