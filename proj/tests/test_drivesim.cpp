#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "latentdrive/common.hpp"
#include "latentdrive/drivesim.hpp"
#include "latentdrive/experiments.hpp"

using namespace ld;
using namespace ld::sim;

namespace {

Scenario straight(double length = 200.0) {
    Scenario s;
    s.lane = {{length, 0.0}};
    return s;
}

std::shared_ptr<const concepts::ConceptBank> bank() {
    static const auto b = std::make_shared<const concepts::ConceptBank>(exp::embedding_bank());
    return b;
}

FeaturePipeline pipeline(double noise = 0.05) {
    FeaturePipeline p;
    p.bank = bank();
    p.noise = noise;
    return p;
}

/// Ground cell classification by explicit ray casting on a straight, empty lane.
std::string cast(const EgoState& e, const Scenario& sc, const SimConfig& c, int r, int col) {
    if (r < c.sky_rows) return sc.palette.sky;
    const double deg = std::numbers::pi / 180.0;
    const double w = c.fov_deg / c.cols;
    const double theta = (c.fov_deg / 2 - (col + 0.5) * w) * deg + e.heading;
    const int band = c.rows - 1 - r;
    const double dist = 0.5 * (c.band_edges[band] + c.band_edges[band + 1]);
    const double lateral = std::abs(e.d + dist * std::sin(theta));
    if (lateral <= sc.half_width - c.edge_band) return sc.palette.road;
    if (lateral <= sc.half_width + c.edge_band) return sc.palette.lane_edge;
    return sc.palette.offroad;
}

int count(const ConceptGrid& g, const std::string& name, int col_lo = 0, int col_hi = 1 << 20) {
    int n = 0;
    for (int r = 0; r < g.rows; ++r)
        for (int c = std::max(0, col_lo); c < std::min(g.cols, col_hi); ++c) n += g.at(r, c) == name;
    return n;
}

} // namespace

TEST_CASE("rendering an empty straight lane") {
    const SimConfig c;
    const auto sc = straight();
    const EgoState centred;
    const auto g = render_concept_grid(centred, sc, c);
    CHECK(g.rows == 8);
    CHECK(g.cols == 6);
    for (int col = 0; col < 6; ++col) {
        CHECK(g.at(0, col) == "sky");
        CHECK(g.at(1, col) == "sky");
    }
    for (int r = 2; r < 8; ++r) {
        CHECK(g.at(r, 2) == "road");
        CHECK(g.at(r, 3) == "road");
        CHECK(g.at(r, 0) == g.at(r, 5));  // mirror symmetry
        CHECK(g.at(r, 1) == g.at(r, 4));
    }
    CHECK(g.at(2, 0) == "tree");  // far outer columns leave the lane
    for (int r = 0; r < 8; ++r)
        for (int col = 0; col < 6; ++col) CHECK(g.at(r, col) == cast(centred, sc, c, r, col));
}

TEST_CASE("rendering at the lane edge matches the ray-cast oracle") {
    const SimConfig c;
    const auto sc = straight();
    for (double d : {1.8, -1.8, 0.9, -0.4}) {
        EgoState e;
        e.d = d;
        const auto g = render_concept_grid(e, sc, c);
        for (int r = 0; r < 8; ++r)
            for (int col = 0; col < 6; ++col) CHECK(g.at(r, col) == cast(e, sc, c, r, col));
    }
    EgoState left;
    left.d = 1.8;
    const auto g = render_concept_grid(left, sc, c);
    // Hugging the left edge: offroad shows up on the left; the inner right columns stay on the lane.
    CHECK(count(g, "tree", 3, 5) == 0);
    CHECK(count(g, "tree", 0, 3) > 0);
    CHECK(count(g, "road", 0, 3) < count(g, "road", 3));
    EgoState right;
    right.d = -1.8;
    const auto h = render_concept_grid(right, sc, c);
    CHECK(count(h, "tree", 1, 3) == 0);
    CHECK(count(h, "tree", 3) > 0);
}

TEST_CASE("obstacle ahead appears in the central columns") {
    const SimConfig c;
    auto sc = straight();
    sc.obstacles = {{6.0, 0.0, 0.5, "pedestrian"}};
    const auto g = render_concept_grid({}, sc, c);
    CHECK(count(g, "pedestrian", 2, 4) > 0);
    CHECK(count(g, "pedestrian", 0, 1) == 0);
    // Nearest bands stop before the obstacle.
    CHECK(g.at(7, 2) == "road");

    // Out of the lookahead cone: behind or far ahead.
    sc.obstacles = {{-3.0, 0.0, 0.5, "pedestrian"}, {40.0, 0.0, 0.5, "pedestrian"}};
    CHECK(count(render_concept_grid({}, sc, c), "pedestrian") == 0);

    // Palette obstacle concept when the obstacle has none.
    sc.obstacles = {{6.0, 0.0, 0.5, ""}};
    sc.palette.obstacle = "cone";
    CHECK(count(render_concept_grid({}, sc, c), "cone") > 0);
}

TEST_CASE("embedding") {
    const SimConfig c;
    auto sc = straight();
    sc.obstacles = {{6.0, 0.3, 0.5, "car"}};
    const auto g = render_concept_grid({}, sc, c);

    const auto exact = embed_scene(g, *bank(), 0.0, 1);
    for (int j = 0; j < exact.cells(); ++j) {
        const auto v = bank()->vector(g.names[j]);
        CHECK(std::equal(v.begin(), v.end(), exact.cell(j).begin()));
        CHECK(concepts::match_concept(exact.cell(j), *bank(), concepts::Similarity::cosine).name == g.names[j]);
    }

    CHECK(embed_scene(g, *bank(), 0.05, 3).data == embed_scene(g, *bank(), 0.05, 3).data);
    CHECK(embed_scene(g, *bank(), 0.05, 3).data != embed_scene(g, *bank(), 0.05, 4).data);

    // Recovery at sigma 0.05 over 1000+ cells.
    int hits = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 21; ++seed) {
        const auto f = embed_scene(g, *bank(), 0.05, seed);
        for (int j = 0; j < f.cells(); ++j) {
            hits += concepts::match_concept(f.cell(j), *bank(), concepts::Similarity::cosine).name == g.names[j];
            ++total;
        }
    }
    CHECK(total >= 1000);
    CHECK(static_cast<double>(hits) / total >= 0.99);
    CHECK_THROWS_AS(embed_scene(g, *bank(), -1.0, 0), ConfigError);
}

TEST_CASE("teacher control law") {
    const SimConfig c;
    const auto sc = straight();
    auto out = teacher_control({}, sc, c);
    CHECK(out.control.steering == 0.0);
    CHECK(out.label == Maneuver::lane_stable);

    EgoState e;
    e.d = 0.5;
    CHECK(teacher_control(e, sc, c).control.steering == doctest::Approx(-0.2));
    e.d = 5.0;
    CHECK(teacher_control(e, sc, c).control.steering == -c.max_steering);

    auto curve = sc;
    curve.lane[0].curvature = 0.02;
    CHECK(teacher_control({}, curve, c).control.steering == doctest::Approx(0.02));
}

TEST_CASE("teacher closed loop settles from one metre") {
    const SimConfig c;
    const auto sc = straight(300.0);
    EgoState e;
    e.d = 1.0;
    for (int t = 0; t < 100; ++t) e = step(e, teacher_control(e, sc, c).control, c.dt, sc);
    CHECK(std::abs(e.d) < 0.05);
}

TEST_CASE("teacher maneuver labels around an obstacle") {
    SimConfig c;
    auto sc = straight();
    sc.obstacles = {{30.0, 0.2, 0.5, "car"}};
    EgoState e;
    e.s = 10.0;
    CHECK(teacher_control(e, sc, c).label == Maneuver::lane_stable);
    e.s = 21.0;
    auto out = teacher_control(e, sc, c);
    CHECK(out.label == Maneuver::avoidance);
    CHECK(out.lateral_target == doctest::Approx(0.2 + 0.5 + c.pass_margin));
    e.s = 30.6;
    CHECK(teacher_control(e, sc, c).label == Maneuver::recovery);
    e.s = 30.5 + c.recovery_time * e.speed + 0.1;
    CHECK(teacher_control(e, sc, c).label == Maneuver::lane_stable);

    c.pass_left = false;
    e.s = 21.0;
    CHECK(teacher_control(e, sc, c).lateral_target == doctest::Approx(0.2 - 0.5 - c.pass_margin));

    // Drivable patches are never avoided.
    sc.obstacles[0].solid = false;
    CHECK(teacher_control(e, sc, c).label == Maneuver::lane_stable);
}

TEST_CASE("kinematics") {
    const auto sc = straight();
    EgoState e;
    e.d = 0.3;
    const auto n = step(e, {}, 0.1, sc);
    CHECK(n.d == 0.3);
    CHECK(n.s == doctest::Approx(0.5));
    CHECK(n.speed == e.speed);
    CHECK_THROWS_AS(step(e, {}, 0.0, sc), ConfigError);

    // Constant steering traces a circle of radius 1/u.
    const double u = 0.1, dt = 0.001;
    EgoState p;
    double x = 0, y = 0;
    for (int t = 0; t < 5000; ++t) {
        x += p.speed * std::cos(p.heading) * dt;
        y += p.speed * std::sin(p.heading) * dt;
        p = step(p, {u, 0}, dt, sc);
    }
    CHECK(std::abs(std::hypot(x, y - 1.0 / u) * u - 1.0) < 10 * dt);
    CHECK(std::abs(p.s - x) < 1e-9);
    CHECK(std::abs(p.d - y) < 1e-9);

    // First-order convergence under halving.
    auto endpoint = [&](double h) {
        EgoState q;
        const int n = static_cast<int>(std::lround(2.0 / h));
        for (int t = 0; t < n; ++t) q = step(q, {0.2, 0}, h, sc);
        return q.d;
    };
    const double a = endpoint(0.02), b = endpoint(0.01), d = endpoint(0.005);
    CHECK((a - b) / (b - d) == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("failure conditions") {
    auto sc = straight();
    EgoState e;
    e.d = sc.half_width;
    CHECK_FALSE(check_failure(e, sc));
    e.d = std::nextafter(sc.half_width, 10.0);
    CHECK(check_failure(e, sc) == FailureKind::lane_departure);
    e.d = -2.0;
    CHECK(check_failure(e, sc) == FailureKind::lane_departure);

    EgoState h;
    h.heading = 31.0 * std::numbers::pi / 180.0;
    CHECK(check_failure(h, sc) == FailureKind::heading_deviation);
    h.heading = std::numbers::pi / 6.0;
    CHECK_FALSE(check_failure(h, sc));

    sc.obstacles = {{10.0, 1.5, 0.5, "car"}};
    EgoState hit;
    hit.s = 10.0;
    hit.d = 1.5;
    hit.heading = 1.0;
    CHECK(check_failure(hit, sc) == FailureKind::collision);
    hit.d = 1.9;  // off-lane and inside the obstacle
    CHECK(check_failure(hit, sc) == FailureKind::collision);
    hit.s = 10.5;
    hit.d = 1.5;
    hit.heading = 0.0;
    CHECK_FALSE(check_failure(hit, sc));  // exactly at the radius
}

TEST_CASE("scenario JSON and validation") {
    exp::Recipe recipe;
    const auto sc = recipe.train_family.generate(5, 3);
    const auto back = scenario_from_json(to_json(sc));
    CHECK(to_json(back) == to_json(sc));
    CHECK(back.obstacles.size() == sc.obstacles.size());

    auto bad = straight();
    bad.obstacles = {{5.0, 0.0, 2.0, "car"}};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    auto tight = straight();
    tight.lane[0].curvature = 1.0 / 3.0;  // radius 3 < 2 * 1.8
    CHECK_THROWS_AS(tight.validate(), ValidationError);
    CHECK_THROWS_AS(scenario_from_json(nlohmann::json{{"half_width", 1.8}}), LoadError);

    SimConfig cfg;
    cfg.band_edges.pop_back();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("rollouts") {
    exp::Recipe recipe;
    const auto& c = recipe.sim;
    const auto sc = recipe.train_family.generate(1, 0);

    RolloutOptions o;
    o.horizon = c.horizon;
    const auto teacher = rollout(teacher_driver(c), sc, c, pipeline(), o, 7);
    CHECK(teacher.soft_success == 1.0);
    CHECK_FALSE(teacher.failure);
    CHECK(teacher.steps.size() == 200);

    const auto spin = rollout(constant_driver(c.max_steering), sc, c, pipeline(), o, 7);
    REQUIRE(spin.failure);
    CHECK(spin.soft_success < 1.0);
    CHECK(spin.soft_success == doctest::Approx(static_cast<double>(spin.failure_step) / 200));
    CHECK(spin.steps.size() == static_cast<std::size_t>(spin.failure_step + 1));

    // Policy driver with features and determinism.
    policy::PolicyShape shape;
    shape.dim = bank()->dim();
    const auto params = std::make_shared<const policy::PolicyParams>(policy::PolicyParams::random(shape, 3));
    o.keep_features = true;
    const auto a = rollout(policy_driver(params), sc, c, pipeline(), o, 11);
    const auto b = rollout(policy_driver(params), sc, c, pipeline(), o, 11);
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t t = 0; t < a.steps.size(); ++t) {
        CHECK(a.steps[t].state == b.steps[t].state);
        CHECK(a.steps[t].control == b.steps[t].control);
    }
    CHECK(a.features.size() == a.steps.size());
    CHECK(rollout_jsonl(a) == rollout_jsonl(b));
    CHECK_THROWS_AS(rollout(policy_driver(params), sc, c, FeaturePipeline{}, o, 11), ConfigError);

    // Failure already at the start.
    RolloutOptions off = o;
    off.initial.d = 3.0;
    const auto dead = rollout(teacher_driver(c), sc, c, pipeline(), off, 1);
    CHECK(dead.soft_success == 0.0);
    CHECK(dead.failure == FailureKind::lane_departure);
}

TEST_CASE("rollout export") {
    exp::Recipe recipe;
    const auto r = run_trial(constant_driver(0.3), recipe.train_family, 0, 1, recipe.sim, pipeline());
    const auto text = rollout_jsonl(r);
    std::vector<nlohmann::json> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        const auto end = text.find('\n', start);
        lines.push_back(nlohmann::json::parse(text.substr(start, end - start)));
        start = end + 1;
    }
    CHECK(lines.size() == r.steps.size() + 1);
    const auto& summary = lines.back().at("summary");
    CHECK(summary.at("soft_success") == r.soft_success);
    CHECK(summary.at("failure") == to_string(*r.failure));
    CHECK(lines.front().contains("label"));
}

TEST_CASE("palette swaps never change teacher behaviour") {
    exp::Recipe recipe;
    const auto base = recipe.train_family.generate(3, 2);
    auto swapped = base;
    swapped.palette.offroad = "house";
    for (auto& o : swapped.obstacles) o.concept_name = "truck";
    RolloutOptions o;
    o.keep_features = true;
    const auto a = rollout(teacher_driver(recipe.sim), base, recipe.sim, pipeline(), o, 4);
    const auto b = rollout(teacher_driver(recipe.sim), swapped, recipe.sim, pipeline(), o, 4);
    REQUIRE(a.steps.size() == b.steps.size());
    bool features_differ = false;
    for (std::size_t t = 0; t < a.steps.size(); ++t) {
        CHECK(a.steps[t].state == b.steps[t].state);
        CHECK(a.steps[t].control == b.steps[t].control);
        CHECK(a.steps[t].label == b.steps[t].label);
        features_differ |= a.features[t].data != b.features[t].data;
    }
    CHECK(features_differ);
}

TEST_CASE("scenario families") {
    exp::Recipe recipe;
    const auto& f = recipe.train_family;
    const auto a = f.generate(9, 4), b = f.generate(9, 4);
    CHECK(to_json(a) == to_json(b));
    CHECK(to_json(a) != to_json(f.generate(9, 5)));
    CHECK(f.initial_state(9, 4, 5.0) == f.initial_state(9, 4, 5.0));
    for (int i = 0; i < 50; ++i) {
        const auto s = f.generate(2, i);
        CHECK_NOTHROW(s.validate());
        for (const auto& o : s.obstacles) {
            CHECK(std::abs(o.lateral) <= f.lateral_max);
            CHECK(o.radius >= f.radius_min);
            CHECK(o.radius <= f.radius_max);
            CHECK(std::find(f.obstacle_concepts.begin(), f.obstacle_concepts.end(), o.concept_name) != f.obstacle_concepts.end());
        }
    }

    auto patched = f;
    patched.patch_rate = 1.0;
    patched.patch_concepts = {"shop"};
    const auto p = patched.generate(1, 0);
    for (const auto& o : p.obstacles) {
        CHECK_FALSE(o.solid);
        CHECK(o.concept_name == "shop");
    }
    const auto ho = exp::heldout_obstacle_family(f).generate(1, 0);
    CHECK(std::find(exp::kHeldOutObstacles.begin(), exp::kHeldOutObstacles.end(), ho.obstacles[0].concept_name) !=
          exp::kHeldOutObstacles.end());
}

TEST_CASE("teacher gate on every family") {
    exp::Recipe recipe;
    for (const auto& fam : {recipe.train_family, exp::heldout_obstacle_family(recipe.train_family),
                            exp::ood_offroad_family(recipe.train_family)}) {
        const auto s = evaluate(teacher_driver(recipe.sim), fam, 100, 123, recipe.sim, pipeline());
        CHECK(s.mean == 1.0);
        for (double b : s.breakdown) CHECK(b == 0.0);
    }
}

TEST_CASE("evaluation aggregates") {
    exp::Recipe recipe;
    const auto drv = constant_driver(0.05);
    const auto par = evaluate(drv, recipe.train_family, 30, 8, recipe.sim, pipeline());
    const auto ser = evaluate_serial(drv, recipe.train_family, 30, 8, recipe.sim, pipeline());
    CHECK(par.soft_success == ser.soft_success);
    CHECK(par.mean == ser.mean);
    CHECK(par.breakdown == ser.breakdown);
    double mass = par.mean;
    for (double b : par.breakdown) mass += b;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(par.mean < 1.0);
    for (double v : par.soft_success) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // Order of trials does not matter.
    std::vector<RolloutRecord> records;
    for (int i = 0; i < 30; ++i) records.push_back(run_trial(drv, recipe.train_family, i, 8, recipe.sim, pipeline()));
    auto reversed = records;
    std::reverse(reversed.begin(), reversed.end());
    const auto x = summarize(records), y = summarize(reversed);
    CHECK(x.mean == doctest::Approx(y.mean).epsilon(1e-15));
    for (int k = 0; k < kManeuverCount; ++k) CHECK(x.breakdown[k] == doctest::Approx(y.breakdown[k]).epsilon(1e-15));

    CHECK_THROWS_AS(evaluate(drv, recipe.train_family, 0, 8, recipe.sim, pipeline()), ConfigError);
    CHECK_THROWS_AS(evaluate_serial(drv, recipe.train_family, -1, 8, recipe.sim, pipeline()), ConfigError);
}
