#pragma once

// Toy closed-loop lane following with obstacle avoidance.
//
// State is curvilinear: arc position s, lateral offset d (left positive),
// heading error ψ (left positive), constant speed v. Kinematics:
//     ṡ = v·cosψ,  ḋ = v·sinψ,  ψ̇ = v·u − v·κ(s)
// integrated with explicit Euler. Observations are concept grids rendered
// from a pinhole-like fan of column wedges and distance bands, embedded
// into feature maps through a concept bank.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentdrive/concept_space.hpp"
#include "latentdrive/control.hpp"
#include "latentdrive/feature_map.hpp"
#include "latentdrive/policy.hpp"

namespace ld::sim {

struct LaneSegment {
    double length = 0.0;
    double curvature = 0.0;  // 1/m, left positive
};

struct Obstacle {
    double s = 0.0;
    double lateral = 0.0;
    double radius = 0.5;
    std::string concept_name;  // empty: palette obstacle concept
    bool solid = true;         // false: drivable surface patch (rendered, never avoided)
};

/// Scene role -> concept name.
struct Palette {
    std::string road = "road";
    std::string lane_edge = "lane_edge";
    std::string obstacle = "car";
    std::string offroad = "tree";
    std::string sky = "sky";

    bool operator==(const Palette&) const = default;
};

struct Scenario {
    std::vector<LaneSegment> lane;
    double half_width = 1.8;
    std::vector<Obstacle> obstacles;
    Palette palette;
    std::uint64_t seed = 0;

    /// Curvature at arc position s; zero beyond the last segment.
    double curvature_at(double s) const;
    double length() const;
    const std::string& obstacle_concept(const Obstacle& o) const;

    /// Throws ValidationError when an obstacle is wider than the half lane or a
    /// turn radius is not above twice the half width.
    void validate() const;
};

Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Scenario& scenario);

struct EgoState {
    double s = 0.0;
    double d = 0.0;
    double heading = 0.0;
    double speed = 5.0;

    bool operator==(const EgoState&) const = default;
};

enum class FailureKind { lane_departure, collision, heading_deviation };
std::string to_string(FailureKind kind);

struct SimConfig {
    int rows = 8;
    int cols = 6;
    int sky_rows = 2;
    double fov_deg = 60.0;
    /// Distance band edges (m) for ground rows, nearest first; size = rows − sky_rows + 1.
    std::vector<double> band_edges{1.0, 2.5, 4.0, 5.5, 7.5, 9.5, 12.0};
    double edge_band = 0.3;  // half thickness of the lane-edge strip (m)

    double dt = 0.1;
    int horizon = 200;
    double speed = 5.0;

    double k_lateral = 0.4;
    double k_heading = 1.14;
    double max_steering = 0.5;
    double trigger_distance = 10.0;
    double recovery_time = 3.0;
    double pass_margin = 0.35;
    /// Overtake every obstacle on the left; otherwise pass on the side away from its offset.
    bool pass_left = true;

    void validate() const;
};

struct ConceptGrid {
    int rows = 0;
    int cols = 0;
    std::vector<std::string> names;  // row-stacked

    const std::string& at(int r, int c) const { return names[static_cast<std::size_t>(r) * cols + c]; }
    bool operator==(const ConceptGrid&) const = default;
};

ConceptGrid render_concept_grid(const EgoState& state, const Scenario& scenario, const SimConfig& config);

/// Cell feature = concept vector + N(0, σ²) per component, renormalized (σ = 0 copies the vector exactly).
FeatureMap embed_scene(const ConceptGrid& grid, const concepts::ConceptBank& bank, double sigma, std::uint64_t seed);

struct TeacherOutput {
    Control control;
    Maneuver label = Maneuver::lane_stable;
    double lateral_target = 0.0;
};

/// Lane-keeping law with curvature feed-forward and a lateral-target shift
/// around obstacles within the trigger distance.
TeacherOutput teacher_control(const EgoState& state, const Scenario& scenario, const SimConfig& config);

EgoState step(const EgoState& state, const Control& control, double dt, const Scenario& scenario);

/// Precedence: collision > lane_departure > heading_deviation. Boundaries are strict.
std::optional<FailureKind> check_failure(const EgoState& state, const Scenario& scenario);

// ---------------------------------------------------------------------------
// Closed loop

/// How observations are produced for feature-driven controllers.
struct FeaturePipeline {
    std::shared_ptr<const concepts::ConceptBank> bank;
    double noise = 0.05;
    /// Optional latent-space substitution applied after embedding.
    std::shared_ptr<const concepts::ConceptBank> substitution_bank;
    std::optional<concepts::SubstitutionRule> rule;
};

struct Driver {
    std::function<Control(const EgoState&, const Scenario&, const FeatureMap*)> act;
    bool uses_features = false;
};

Driver teacher_driver(const SimConfig& config);
Driver policy_driver(std::shared_ptr<const policy::PolicyParams> params);
Driver constant_driver(double steering);

struct RolloutOptions {
    int horizon = 200;
    bool keep_features = false;
    bool render_always = false;  // embed features even for the teacher
    double control_noise = 0.0;  // std of Gaussian noise added to executed steering
    bool keep_matches = false;   // record per-cell substitution matches
    EgoState initial;
};

struct StepRecord {
    EgoState state;
    int feature_id = -1;
    Control control;
    Control teacher;
    Maneuver label = Maneuver::lane_stable;
    int replaced = 0;
    std::vector<concepts::MatchResult> matches;  // filled when keep_matches and a rule is active
};

struct RolloutRecord {
    std::vector<StepRecord> steps;
    std::vector<FeatureMap> features;
    std::optional<FailureKind> failure;
    int failure_step = -1;
    Maneuver failure_label = Maneuver::lane_stable;
    int horizon = 0;
    double soft_success = 0.0;
};

RolloutRecord rollout(const Driver& driver, const Scenario& scenario, const SimConfig& config,
                      const FeaturePipeline& pipeline, const RolloutOptions& options, std::uint64_t seed);

/// JSON-lines: one object per step, then {"summary": {...}}.
std::string rollout_jsonl(const RolloutRecord& record);

struct ScenarioFamily {
    int segments = 3;
    double lane_length = 130.0;
    double max_curvature = 0.01;
    double half_width = 1.8;
    double first_obstacle_min = 14.0;
    double first_obstacle_max = 20.0;
    double spacing_min = 30.0;
    double spacing_max = 36.0;
    double lateral_min = 0.0;  // obstacle |lateral| in [lateral_min, lateral_max], random side
    double lateral_max = 0.3;
    double radius_min = 0.4;
    double radius_max = 0.7;
    double initial_offset_max = 0.3;
    double initial_heading_max = 0.05;
    Palette palette;
    std::vector<std::string> obstacle_concepts{"car"};
    std::vector<std::string> offroad_concepts{"tree"};
    /// Probability that an object slot holds a drivable patch instead of an obstacle.
    double patch_rate = 0.0;
    std::vector<std::string> patch_concepts;

    Scenario generate(std::uint64_t seed, int index) const;
    EgoState initial_state(std::uint64_t seed, int index, double speed) const;
};

struct EvalSummary {
    int trials = 0;
    double mean = 0.0;
    double stddev = 0.0;
    /// Mean lost success mass attributed to the maneuver at the failure step.
    std::array<double, kManeuverCount> breakdown{};
    std::vector<double> soft_success;
    long replaced_cells = 0;
};

/// Trial i of an evaluation: scenario family.generate(seed, i), initial state
/// family.initial_state(seed, i), streams derived from (seed, i).
RolloutRecord run_trial(const Driver& driver, const ScenarioFamily& family, int index, std::uint64_t seed,
                        const SimConfig& config, const FeaturePipeline& pipeline, bool keep_matches = false);

/// Trial i runs scenario family.generate(seed, i) with streams derived from (seed, i).
/// Trials run in parallel (OpenMP); aggregation is in trial order.
EvalSummary evaluate(const Driver& driver, const ScenarioFamily& family, int trials, std::uint64_t seed,
                     const SimConfig& config, const FeaturePipeline& pipeline);

/// Serial reference for evaluate.
EvalSummary evaluate_serial(const Driver& driver, const ScenarioFamily& family, int trials, std::uint64_t seed,
                            const SimConfig& config, const FeaturePipeline& pipeline);

EvalSummary summarize(const std::vector<RolloutRecord>& records);

} // namespace ld::sim
