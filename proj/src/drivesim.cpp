#include "latentdrive/drivesim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "latentdrive/common.hpp"
#include "latentdrive/rng.hpp"

namespace ld::sim {

// ---------------------------------------------------------------------------
// Scenario

double Scenario::curvature_at(double s) const {
    double start = 0.0;
    for (const auto& seg : lane) {
        if (s < start + seg.length) return s < start ? 0.0 : seg.curvature;
        start += seg.length;
    }
    return 0.0;
}

double Scenario::length() const {
    double total = 0.0;
    for (const auto& seg : lane) total += seg.length;
    return total;
}

const std::string& Scenario::obstacle_concept(const Obstacle& o) const {
    return o.concept_name.empty() ? palette.obstacle : o.concept_name;
}

void Scenario::validate() const {
    if (!(half_width > 0.0)) throw ValidationError("lane half width must be positive");
    for (const auto& seg : lane) {
        if (!(seg.length > 0.0)) throw ValidationError("lane segment length must be positive");
        if (seg.curvature != 0.0 && !(1.0 / std::abs(seg.curvature) > 2.0 * half_width))
            throw ValidationError("lane curvature too tight: turn radius must exceed twice the half width");
    }
    for (const auto& o : obstacles)
        if (!(o.radius > 0.0 && o.radius < half_width))
            throw ValidationError("obstacle radius must be positive and below the lane half width");
}

Scenario scenario_from_json(const nlohmann::json& j) {
    Scenario s;
    try {
        for (const auto& seg : j.at("lane")) s.lane.push_back({seg.at("length").get<double>(), seg.value("curvature", 0.0)});
        s.half_width = j.value("half_width", 1.8);
        for (const auto& o : j.value("obstacles", nlohmann::json::array()))
            s.obstacles.push_back({o.at("s").get<double>(), o.value("lateral", 0.0), o.at("radius").get<double>(),
                                   o.value("concept", std::string()), o.value("solid", true)});
        if (j.contains("palette")) {
            const auto& p = j.at("palette");
            s.palette.road = p.value("road", s.palette.road);
            s.palette.lane_edge = p.value("lane_edge", s.palette.lane_edge);
            s.palette.obstacle = p.value("obstacle", s.palette.obstacle);
            s.palette.offroad = p.value("offroad", s.palette.offroad);
            s.palette.sky = p.value("sky", s.palette.sky);
        }
        s.seed = j.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("scenario: ") + e.what());
    }
    s.validate();
    return s;
}

nlohmann::json to_json(const Scenario& s) {
    nlohmann::json lane = nlohmann::json::array();
    for (const auto& seg : s.lane) lane.push_back({{"length", seg.length}, {"curvature", seg.curvature}});
    nlohmann::json obstacles = nlohmann::json::array();
    for (const auto& o : s.obstacles)
        obstacles.push_back({{"s", o.s}, {"lateral", o.lateral}, {"radius", o.radius}, {"concept", o.concept_name}, {"solid", o.solid}});
    return {{"lane", lane},
            {"half_width", s.half_width},
            {"obstacles", obstacles},
            {"palette",
             {{"road", s.palette.road},
              {"lane_edge", s.palette.lane_edge},
              {"obstacle", s.palette.obstacle},
              {"offroad", s.palette.offroad},
              {"sky", s.palette.sky}}},
            {"seed", s.seed}};
}

std::string to_string(FailureKind kind) {
    switch (kind) {
    case FailureKind::lane_departure: return "lane_departure";
    case FailureKind::collision: return "collision";
    case FailureKind::heading_deviation: return "heading_deviation";
    }
    return "unknown";
}

void SimConfig::validate() const {
    if (rows <= sky_rows || cols <= 0 || sky_rows < 0) throw ConfigError("render grid must have ground rows");
    if (static_cast<int>(band_edges.size()) != rows - sky_rows + 1)
        throw ConfigError("band_edges must have rows - sky_rows + 1 entries");
    for (std::size_t i = 1; i < band_edges.size(); ++i)
        if (!(band_edges[i] > band_edges[i - 1])) throw ConfigError("band_edges must increase");
    if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw ConfigError("field of view must lie in (0, 180) degrees");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (horizon <= 0) throw ConfigError("horizon must be positive");
    if (!(speed > 0.0)) throw ConfigError("speed must be positive");
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Vec2 {
    double x = 0.0, y = 0.0;
};

double norm(Vec2 p) { return std::hypot(p.x, p.y); }

double dist_to_segment(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab{b.x - a.x, b.y - a.y};
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    double t = len2 > 0 ? ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return norm({p.x - (a.x + t * ab.x), p.y - (a.y + t * ab.y)});
}

// Distance from p to {q : |q| ≤ reach, lo ≤ angle(q) ≤ hi}, a convex wedge (hi − lo < π).
double dist_to_wedge(Vec2 p, double lo, double hi, double reach) {
    const double ang = std::atan2(p.y, p.x);
    const bool inside_angle = ang >= lo && ang <= hi;
    const double r = norm(p);
    if (inside_angle && r <= reach) return 0.0;
    double best = std::min(dist_to_segment(p, {0, 0}, {reach * std::cos(lo), reach * std::sin(lo)}),
                           dist_to_segment(p, {0, 0}, {reach * std::cos(hi), reach * std::sin(hi)}));
    if (inside_angle) best = std::min(best, r - reach);
    return best;
}

// Ego frame (x forward, y left) -> road-aligned frame at the ego.
Vec2 ego_to_road(Vec2 p, double heading) {
    const double c = std::cos(heading), s = std::sin(heading);
    return {p.x * c - p.y * s, p.x * s + p.y * c};
}

Vec2 road_to_ego(Vec2 p, double heading) {
    const double c = std::cos(heading), s = std::sin(heading);
    return {p.x * c + p.y * s, -p.x * s + p.y * c};
}

} // namespace

ConceptGrid render_concept_grid(const EgoState& state, const Scenario& scenario, const SimConfig& config) {
    config.validate();
    ConceptGrid grid{config.rows, config.cols, std::vector<std::string>(static_cast<std::size_t>(config.rows) * config.cols)};
    const double kappa = scenario.curvature_at(state.s);
    const double half_fov = 0.5 * config.fov_deg * kDeg;
    const double width = config.fov_deg * kDeg / config.cols;

    // Obstacles in the ego frame.
    std::vector<std::pair<Vec2, const Obstacle*>> nearby;
    for (const auto& o : scenario.obstacles) {
        const double ds = o.s - state.s;
        if (ds < -config.band_edges.back() || ds > 2.0 * config.band_edges.back()) continue;
        const Vec2 road{ds, o.lateral + 0.5 * kappa * ds * ds - state.d};
        nearby.emplace_back(road_to_ego(road, state.heading), &o);
    }

    for (int r = 0; r < config.rows; ++r) {
        for (int c = 0; c < config.cols; ++c) {
            auto& cell = grid.names[static_cast<std::size_t>(r) * config.cols + c];
            if (r < config.sky_rows) {
                cell = scenario.palette.sky;
                continue;
            }
            // Column 0 is leftmost; ground row `rows − 1` is the nearest band.
            const double hi = half_fov - c * width;
            const double lo = hi - width;
            const int band = config.rows - 1 - r;
            const double reach = config.band_edges[band + 1];

            const Obstacle* hit = nullptr;
            for (const auto& [pos, o] : nearby)
                if (dist_to_wedge(pos, lo, hi, reach) < o->radius) {
                    hit = o;
                    break;
                }
            if (hit) {
                cell = scenario.obstacle_concept(*hit);
                continue;
            }

            const double mid = 0.5 * (config.band_edges[band] + reach);
            const double theta = 0.5 * (lo + hi);
            const Vec2 road = ego_to_road({mid * std::cos(theta), mid * std::sin(theta)}, state.heading);
            const double lateral = std::abs(state.d + road.y - 0.5 * kappa * road.x * road.x);
            if (lateral <= scenario.half_width - config.edge_band) cell = scenario.palette.road;
            else if (lateral <= scenario.half_width + config.edge_band) cell = scenario.palette.lane_edge;
            else cell = scenario.palette.offroad;
        }
    }
    return grid;
}

FeatureMap embed_scene(const ConceptGrid& grid, const concepts::ConceptBank& bank, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw ConfigError("feature noise must be non-negative");
    FeatureMap map(grid.rows, grid.cols, bank.dim());
    std::normal_distribution<double> normal;
    for (int j = 0; j < map.cells(); ++j) {
        const auto v = bank.vector(grid.names[j]);
        auto dst = map.cell(j);
        if (sigma == 0.0) {
            std::copy(v.begin(), v.end(), dst.begin());
            continue;
        }
        Rng rng = make_rng(seed, {static_cast<std::uint64_t>(j)});
        std::vector<double> noisy(v.size());
        double sq = 0.0;
        for (std::size_t k = 0; k < v.size(); ++k) {
            noisy[k] = v[k] + sigma * normal(rng);
            sq += noisy[k] * noisy[k];
        }
        const double inv = 1.0 / std::sqrt(sq);
        for (std::size_t k = 0; k < v.size(); ++k) dst[k] = static_cast<float>(noisy[k] * inv);
    }
    return map;
}

// ---------------------------------------------------------------------------
// Teacher and dynamics

TeacherOutput teacher_control(const EgoState& state, const Scenario& scenario, const SimConfig& config) {
    TeacherOutput out;
    const double recovery_span = config.recovery_time * state.speed;
    double best_ahead = std::numeric_limits<double>::infinity();
    bool recovering = false;
    for (const auto& o : scenario.obstacles) {
        if (!o.solid) continue;
        const double ahead = o.s - state.s;
        const double passed = state.s - (o.s + o.radius);
        if (ahead <= config.trigger_distance && passed <= 0.0) {
            if (ahead < best_ahead) {
                best_ahead = ahead;
                const double offset = o.radius + config.pass_margin;
                out.lateral_target = (config.pass_left || o.lateral < 0.0) ? o.lateral + offset : o.lateral - offset;
                out.label = Maneuver::avoidance;
            }
        } else if (passed > 0.0 && passed <= recovery_span) {
            recovering = true;
        }
    }
    if (out.label != Maneuver::avoidance && recovering) out.label = Maneuver::recovery;

    const double u = scenario.curvature_at(state.s) - config.k_lateral * (state.d - out.lateral_target) -
                     config.k_heading * state.heading;
    out.control = {std::clamp(u, -config.max_steering, config.max_steering), 0.0};
    return out;
}

EgoState step(const EgoState& state, const Control& control, double dt, const Scenario& scenario) {
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    EgoState next = state;
    const double v = state.speed;
    next.s = state.s + v * std::cos(state.heading) * dt;
    next.d = state.d + v * std::sin(state.heading) * dt;
    next.heading = state.heading + (v * control.steering - v * scenario.curvature_at(state.s)) * dt;
    return next;
}

std::optional<FailureKind> check_failure(const EgoState& state, const Scenario& scenario) {
    for (const auto& o : scenario.obstacles)
        if (o.solid && std::hypot(state.s - o.s, state.d - o.lateral) < o.radius) return FailureKind::collision;
    if (std::abs(state.d) > scenario.half_width) return FailureKind::lane_departure;
    if (std::abs(state.heading) > std::numbers::pi / 6.0) return FailureKind::heading_deviation;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Closed loop

Driver teacher_driver(const SimConfig& config) {
    return {[config](const EgoState& s, const Scenario& sc, const FeatureMap*) { return teacher_control(s, sc, config).control; },
            false};
}

Driver policy_driver(std::shared_ptr<const policy::PolicyParams> params) {
    return {[params](const EgoState&, const Scenario&, const FeatureMap* f) {
                if (!f) throw ConfigError("policy driver needs feature observations");
                return policy::policy_forward(*params, *f);
            },
            true};
}

Driver constant_driver(double steering) {
    return {[steering](const EgoState&, const Scenario&, const FeatureMap*) { return Control{steering, 0.0}; }, false};
}

RolloutRecord rollout(const Driver& driver, const Scenario& scenario, const SimConfig& config,
                      const FeaturePipeline& pipeline, const RolloutOptions& options, std::uint64_t seed) {
    config.validate();
    scenario.validate();
    if (options.horizon <= 0) throw ConfigError("rollout horizon must be positive");
    const bool render = driver.uses_features || options.render_always || options.keep_features;
    if (render && !pipeline.bank) throw ConfigError("feature pipeline has no concept bank");
    if (pipeline.rule && !pipeline.substitution_bank) throw ConfigError("substitution rule without a concept bank");

    RolloutRecord record;
    record.horizon = options.horizon;
    EgoState state = options.initial;
    state.speed = config.speed;
    std::normal_distribution<double> normal;
    Rng control_rng = make_rng(seed, {0x6374726c});

    if (check_failure(state, scenario)) {
        record.failure = check_failure(state, scenario);
        record.failure_step = 0;
        record.failure_label = teacher_control(state, scenario, config).label;
        record.soft_success = 0.0;
        return record;
    }

    for (int t = 0; t < options.horizon; ++t) {
        StepRecord step_record;
        step_record.state = state;
        const auto teacher = teacher_control(state, scenario, config);
        step_record.teacher = teacher.control;
        step_record.label = teacher.label;

        std::optional<FeatureMap> features;
        if (render) {
            const auto grid = render_concept_grid(state, scenario, config);
            features = embed_scene(grid, *pipeline.bank, pipeline.noise, derive_seed(seed, {1, static_cast<std::uint64_t>(t)}));
            if (pipeline.rule) {
                auto swapped = concepts::substitute_serial(*features, *pipeline.substitution_bank, *pipeline.rule,
                                                           derive_seed(seed, {2, static_cast<std::uint64_t>(t)}));
                step_record.replaced = static_cast<int>(swapped.replaced());
                if (options.keep_matches) step_record.matches = std::move(swapped.matches);
                features = std::move(swapped.features);
            }
        }

        Control u = driver.act(state, scenario, features ? &*features : nullptr);
        if (options.control_noise > 0.0) u.steering += options.control_noise * normal(control_rng);
        step_record.control = u;
        if (options.keep_features && features) {
            step_record.feature_id = static_cast<int>(record.features.size());
            record.features.push_back(std::move(*features));
        }
        record.steps.push_back(step_record);

        state = step(state, u, config.dt, scenario);
        if (auto failure = check_failure(state, scenario)) {
            record.failure = failure;
            record.failure_step = t;
            record.failure_label = teacher.label;
            record.soft_success = static_cast<double>(t) / options.horizon;
            return record;
        }
    }
    record.soft_success = 1.0;
    return record;
}

std::string rollout_jsonl(const RolloutRecord& record) {
    std::ostringstream out;
    for (std::size_t t = 0; t < record.steps.size(); ++t) {
        const auto& s = record.steps[t];
        out << nlohmann::json{{"step", t},
                              {"s", s.state.s},
                              {"d", s.state.d},
                              {"heading", s.state.heading},
                              {"feature_id", s.feature_id},
                              {"steering", s.control.steering},
                              {"teacher_steering", s.teacher.steering},
                              {"label", to_string(s.label)},
                              {"replaced", s.replaced}}
                   .dump()
            << '\n';
    }
    nlohmann::json summary{{"soft_success", record.soft_success},
                           {"horizon", record.horizon},
                           {"failure", record.failure ? to_string(*record.failure) : std::string()},
                           {"failure_step", record.failure_step},
                           {"failure_label", record.failure ? to_string(record.failure_label) : std::string()}};
    out << nlohmann::json{{"summary", summary}}.dump() << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Scenario families and evaluation

namespace {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

template <class T>
const T& pick(Rng& rng, const std::vector<T>& options) {
    if (options.empty()) throw ConfigError("scenario family has an empty concept list");
    return options[static_cast<std::size_t>(uniform01(rng) * options.size())];
}

} // namespace

Scenario ScenarioFamily::generate(std::uint64_t seed, int index) const {
    Rng rng = make_rng(seed, {0x7363656e, static_cast<std::uint64_t>(index)});
    Scenario s;
    s.seed = derive_seed(seed, {static_cast<std::uint64_t>(index)});
    s.half_width = half_width;
    s.palette = palette;
    s.palette.offroad = pick(rng, offroad_concepts);
    for (int i = 0; i < segments; ++i)
        s.lane.push_back({lane_length / segments, uniform(rng, -max_curvature, max_curvature)});
    double pos = uniform(rng, first_obstacle_min, first_obstacle_max);
    while (pos < lane_length) {
        const double side = uniform01(rng) < 0.5 ? -1.0 : 1.0;
        const double lateral = side * uniform(rng, lateral_min, lateral_max);
        const double radius = uniform(rng, radius_min, radius_max);
        if (patch_rate > 0.0 && uniform01(rng) < patch_rate)
            s.obstacles.push_back({pos, lateral, radius, pick(rng, patch_concepts), false});
        else
            s.obstacles.push_back({pos, lateral, radius, pick(rng, obstacle_concepts), true});
        pos += uniform(rng, spacing_min, spacing_max);
    }
    for (const auto& o : s.obstacles)
        if (o.solid) {
            s.palette.obstacle = o.concept_name;
            break;
        }
    s.validate();
    return s;
}

EgoState ScenarioFamily::initial_state(std::uint64_t seed, int index, double speed) const {
    Rng rng = make_rng(seed, {0x696e6974, static_cast<std::uint64_t>(index)});
    EgoState e;
    e.d = uniform(rng, -initial_offset_max, initial_offset_max);
    e.heading = uniform(rng, -initial_heading_max, initial_heading_max);
    e.speed = speed;
    return e;
}

EvalSummary summarize(const std::vector<RolloutRecord>& records) {
    EvalSummary out;
    out.trials = static_cast<int>(records.size());
    if (records.empty()) return out;
    for (const auto& r : records) {
        out.soft_success.push_back(r.soft_success);
        out.mean += r.soft_success;
        if (r.failure) out.breakdown[static_cast<int>(r.failure_label)] += 1.0 - r.soft_success;
        for (const auto& s : r.steps) out.replaced_cells += s.replaced;
    }
    const double n = static_cast<double>(records.size());
    out.mean /= n;
    for (auto& b : out.breakdown) b /= n;
    double var = 0.0;
    for (double v : out.soft_success) var += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(var / n);
    return out;
}

RolloutRecord run_trial(const Driver& driver, const ScenarioFamily& family, int i, std::uint64_t seed,
                        const SimConfig& config, const FeaturePipeline& pipeline, bool keep_matches) {
    const Scenario scenario = family.generate(seed, i);
    RolloutOptions options;
    options.horizon = config.horizon;
    options.initial = family.initial_state(seed, i, config.speed);
    options.keep_matches = keep_matches;
    return rollout(driver, scenario, config, pipeline, options, derive_seed(seed, {0x747269616c, static_cast<std::uint64_t>(i)}));
}

namespace {

void check_trials(int trials) {
    if (trials <= 0) throw ConfigError("trial count must be positive");
}

} // namespace

EvalSummary evaluate(const Driver& driver, const ScenarioFamily& family, int trials, std::uint64_t seed,
                     const SimConfig& config, const FeaturePipeline& pipeline) {
    check_trials(trials);
    std::vector<RolloutRecord> records(static_cast<std::size_t>(trials));
    std::string error;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < trials; ++i) {
        try {
            records[i] = run_trial(driver, family, i, seed, config, pipeline);
        } catch (const std::exception& e) {
#pragma omp critical
            if (error.empty()) error = e.what();
        }
    }
    if (!error.empty()) throw ConfigError(error);
    return summarize(records);
}

EvalSummary evaluate_serial(const Driver& driver, const ScenarioFamily& family, int trials, std::uint64_t seed,
                            const SimConfig& config, const FeaturePipeline& pipeline) {
    check_trials(trials);
    std::vector<RolloutRecord> records;
    for (int i = 0; i < trials; ++i) records.push_back(run_trial(driver, family, i, seed, config, pipeline));
    return summarize(records);
}

} // namespace ld::sim
