#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "latentdrive/common.hpp"
#include "latentdrive/policy.hpp"
#include "latentdrive/rng.hpp"

using namespace ld;
using namespace ld::policy;

namespace {

PolicyShape tiny(bool linear = false) {
    PolicyShape s;
    s.rows = 2;
    s.cols = 3;
    s.dim = 4;
    s.hidden = 5;
    s.linear = linear;
    return s;
}

FeatureMap random_map(const PolicyShape& s, std::uint64_t seed, double scale = 1.0) {
    FeatureMap f(s.rows, s.cols, s.dim);
    Rng rng = make_rng(seed, {0x66});
    for (auto& v : f.data) v = static_cast<float>((uniform01(rng) * 2 - 1) * scale);
    return f;
}

/// Explicit-loop forward over the documented parameter layout.
double oracle_steering(const PolicyParams& p, const FeatureMap& f) {
    const auto& s = p.shape;
    const int n = s.inputs();
    double out = p.values[p.b2_offset()];
    for (int h = 0; h < s.hidden; ++h) {
        double z = p.values[p.b1_offset() + h];
        for (int i = 0; i < n; ++i) z += p.values[static_cast<std::size_t>(h) * n + i] * f.data[i];
        out += p.values[p.w2_offset() + h] * (s.linear ? z : std::tanh(z));
    }
    return out;
}

} // namespace

TEST_CASE("forward pass") {
    const auto s = tiny();
    const auto f = random_map(s, 1);
    CHECK(policy_forward(PolicyParams::zeros(s), f).steering == 0.0);

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto p = PolicyParams::random(s, seed);
        CHECK(policy_raw(p, f).steering == doctest::Approx(oracle_steering(p, f)).epsilon(1e-12));
        CHECK(policy_forward(p, f) == policy_forward(p, f));
        auto copy = f;
        CHECK(policy_forward(p, copy) == policy_forward(p, f));
    }

    auto big = PolicyParams::zeros(s);
    big.values[big.b2_offset()] = 3.0;
    CHECK(policy_forward(big, f).steering == s.max_steering);
    big.values[big.b2_offset()] = -3.0;
    CHECK(policy_forward(big, f).steering == -s.max_steering);
    CHECK(policy_forward(big, f).acceleration == 0.0);

    FeatureMap wrong(2, 3, 5);
    CHECK_THROWS_AS(policy_forward(big, wrong), DimensionError);
}

TEST_CASE("parameter layout") {
    const auto s = tiny();
    const auto p = PolicyParams::random(s, 3);
    CHECK(p.size() == static_cast<std::size_t>(5 * 24 + 5 + 10 + 2));
    CHECK(p.values.size() == p.size());
    const double bound1 = 1.0 / std::sqrt(24.0), bound2 = 1.0 / std::sqrt(5.0);
    for (std::size_t i = 0; i < p.b1_offset(); ++i) CHECK(std::abs(p.values[i]) <= bound1);
    for (std::size_t i = p.b1_offset(); i < p.w2_offset(); ++i) CHECK(p.values[i] == 0.0);
    for (std::size_t i = p.w2_offset(); i < p.b2_offset(); ++i) CHECK(std::abs(p.values[i]) <= bound2);
}

TEST_CASE("loss") {
    CHECK(loss({0.2, 0}, {0.2, 0}) == 0.0);
    CHECK(loss({0.1, 0}, {0.3, 0}) == doctest::Approx(0.04));
    CHECK(loss({0.1, 0}, {0.3, 0}) == loss({0.3, 0}, {0.1, 0}));
}

TEST_CASE("adam") {
    SUBCASE("closed-form first step") {
        std::vector<double> p{0.0}, g{1.0};
        AdamState st;
        adam_step(p, g, st, {});
        CHECK(p[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
        CHECK(st.step == 1);
    }
    SUBCASE("zero gradients leave parameters and decay moments") {
        std::vector<double> p{1.0, -2.0}, g{0.5, -0.5};
        AdamState st;
        adam_step(p, g, st, {});
        const auto after = p;
        const auto m = st.m, v = st.v;
        std::vector<double> zero{0.0, 0.0};
        adam_step(p, zero, st, {});
        for (int i = 0; i < 2; ++i) {
            CHECK(st.m[i] == doctest::Approx(0.9 * m[i]));
            CHECK(st.v[i] == doctest::Approx(0.999 * v[i]));
        }
        // With earlier momentum the parameters still move; from a fresh state they do not.
        AdamState fresh;
        auto q = after;
        adam_step(q, zero, fresh, {});
        CHECK(q == after);
    }
    SUBCASE("non-finite gradients") {
        std::vector<double> p{0.0}, g{std::nan("")};
        AdamState st;
        CHECK_THROWS_AS(adam_step(p, g, st, {}), TrainingError);
        g[0] = INFINITY;
        CHECK_THROWS_AS(adam_step(p, g, st, {}), TrainingError);
    }
}

TEST_CASE("plateau scheduler with factor 1 keeps the rate") {
    PlateauScheduler keep{1.0, 10};
    double lr = 1e-3;
    for (int e = 0; e < 40; ++e) lr = keep.update(1.0, lr);
    CHECK(lr == 1e-3);

    PlateauScheduler halve{0.5, 2};
    lr = 1.0;
    std::vector<double> seen;
    for (int e = 0; e < 7; ++e) seen.push_back(lr = halve.update(1.0, lr));
    // epoch 0 sets the best; three bad epochs exceed patience 2
    CHECK(seen[2] == 1.0);
    CHECK(seen[3] == 0.5);
    CHECK(seen[6] == 0.25);
}

TEST_CASE("gradient check") {
    const auto s = tiny();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto p = PolicyParams::random(s, seed);
        CHECK(finite_diff_check(p, random_map(s, seed + 10), 0.3, 1e-4, 60, seed) < 1e-5);
    }
    const auto lin = PolicyParams::random(tiny(true), 4);
    CHECK(finite_diff_check(lin, random_map(tiny(true), 4), -0.2, 1e-4, 100, 1) < 1e-8);

    // Zero input, zero biases: no gradient on the first layer weights.
    auto p = PolicyParams::random(s, 9);
    std::fill(p.values.begin() + static_cast<long>(p.b1_offset()), p.values.begin() + static_cast<long>(p.w2_offset()), 0.0);
    std::vector<double> grad(p.size(), 0.0);
    accumulate_gradient(p, FeatureMap(2, 3, 4), 0.5, 1.0, grad);
    for (std::size_t i = 0; i < p.b1_offset(); ++i) CHECK(grad[i] == 0.0);
}

TEST_CASE("training") {
    const auto s = tiny();
    SUBCASE("constant teacher") {
        std::vector<TrainRecord> data;
        for (int i = 0; i < 40; ++i) data.push_back({random_map(s, i), {0.2, 0}, Maneuver::lane_stable});
        TrainConfig c;
        c.shape = s;
        c.epochs = 300;
        c.batch_size = 8;
        c.seed = 3;
        c.adam.lr = 1e-2;
        const auto r = train(data, c);
        CHECK(r.loss_curve.size() == 300);
        CHECK(r.lr_curve.size() == 300);
        for (const auto& d : data) CHECK(policy_forward(r.params, d.features).steering == doctest::Approx(0.2).epsilon(0.05));
        for (const auto& d : data) CHECK(std::abs(policy_forward(r.params, d.features).steering - 0.2) < 1e-2);
    }
    SUBCASE("linear toy set reaches a small loss and never goes up full-batch") {
        auto lin = tiny(true);
        const auto truth = PolicyParams::random(lin, 77);
        std::vector<TrainRecord> data;
        for (int i = 0; i < 50; ++i) {
            auto f = random_map(lin, 100 + i);
            data.push_back({f, {policy_raw(truth, f).steering, 0}, Maneuver::lane_stable});
        }
        TrainConfig c;
        c.shape = lin;
        c.epochs = 1500;
        c.batch_size = 50;
        c.seed = 1;
        const auto r = train(data, c, PolicyParams::random(lin, 5));
        CHECK(r.loss_curve.back() < 1e-3);
        CHECK(dataset_loss(r.params, data) < 1e-3);
        int rises = 0;
        for (std::size_t e = 1; e < r.loss_curve.size(); ++e) rises += r.loss_curve[e] > r.loss_curve[e - 1];
        CHECK(rises == 0);
    }
    SUBCASE("edges") {
        TrainConfig c;
        c.shape = s;
        CHECK_THROWS_AS(train(std::span<const TrainRecord>{}, c), ConfigError);
        std::vector<TrainRecord> one{{random_map(s, 1), {0.1, 0}, Maneuver::avoidance}};
        c.epochs = 0;
        const auto init = PolicyParams::random(s, 5);
        const auto r = train(one, c, init);
        CHECK(r.params.values == init.values);
        CHECK(r.loss_curve.empty());
    }
    SUBCASE("determinism") {
        std::vector<TrainRecord> data;
        for (int i = 0; i < 20; ++i) data.push_back({random_map(s, i), {0.01 * i, 0}, Maneuver::lane_stable});
        TrainConfig c;
        c.shape = s;
        c.epochs = 5;
        c.batch_size = 4;
        c.seed = 8;
        CHECK(train(data, c).params.values == train(data, c).params.values);
    }
}

TEST_CASE("checkpoint round trip") {
    const auto p = PolicyParams::random(tiny(), 12);
    const auto a = to_archive(p);
    CHECK(a.metadata.at("hidden_dim") == 5);
    CHECK(a.metadata.at("feature_dim") == 4);
    CHECK(a.metadata.contains("grid"));
    const auto path = std::filesystem::temp_directory_path() / "ld_policy.ldt";
    save_policy(path, p);
    const auto back = load_policy(path);
    CHECK(back.shape == p.shape);
    const auto f = random_map(tiny(), 2);
    // checkpoints store f32: outputs agree to float precision
    CHECK(policy_raw(back, f).steering == doctest::Approx(policy_raw(p, f).steering).epsilon(1e-5));
    // and a second round trip is exact
    save_policy(path, back);
    CHECK(load_policy(path).values == back.values);
    std::filesystem::remove(path);

    // forward is invariant to feature-map serialisation
    CHECK(policy_forward(p, feature_map_from_archive(to_archive(f))) == policy_forward(p, f));
}
