#pragma once

// Experiment recipes shared by the CLI, the debug service and the acceptance
// suite: concept banks, teacher data collection, training and evaluation.

#include <array>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "latentdrive/analysis.hpp"
#include "latentdrive/concept_space.hpp"
#include "latentdrive/drivesim.hpp"
#include "latentdrive/policy.hpp"

namespace ld::exp {

inline const std::vector<std::string> kSceneConcepts{"road", "lane_edge", "sky", "tree", "house", "shop"};
inline const std::vector<std::string> kTrainedObstacles{"car", "pedestrian", "cone"};
/// Held-out obstacle i is drawn near trained obstacle i.
inline const std::vector<std::string> kHeldOutObstacles{"truck", "cyclist", "barrier"};

struct BankOptions {
    std::uint64_t seed = 7;
    int dim = 32;
    /// Norm of the perturbation separating a held-out obstacle from its parent.
    double heldout_offset = 0.4;
};

/// Text-encoder-style bank over every scene and obstacle concept. All entries
/// carry both roles.
concepts::ConceptBank embedding_bank(const BankOptions& options = {});

/// Baseline without a shared embedding space: concept i is the basis vector e_i.
/// Held-out obstacles occupy slots no trained concept uses.
concepts::ConceptBank one_hot_bank(int dim = 32);

struct Recipe {
    sim::SimConfig sim;
    sim::ScenarioFamily train_family;
    int train_scenarios = 48;
    double control_noise = 0.08;  // executed-steering noise during collection
    double feature_noise = 0.05;
    policy::TrainConfig train;
    int trials = 100;
    std::uint64_t seed = 2024;

    Recipe();
};

/// Family with the trained palette replaced by held-out obstacles.
sim::ScenarioFamily heldout_obstacle_family(const sim::ScenarioFamily& base);
/// Family whose offroad cells are houses or shops instead of trees.
sim::ScenarioFamily ood_offroad_family(const sim::ScenarioFamily& base);

/// Teacher rollouts with control noise; every visited state becomes a record
/// labelled with the teacher's clean action.
std::vector<policy::TrainRecord> collect_teacher_data(const Recipe& recipe, const sim::ScenarioFamily& family,
                                                      const concepts::ConceptBank& bank, std::uint64_t seed);

policy::TrainResult train_policy(const Recipe& recipe, const std::vector<policy::TrainRecord>& data,
                                 const concepts::ConceptBank& bank);

sim::FeaturePipeline pipeline_for(const Recipe& recipe, std::shared_ptr<const concepts::ConceptBank> bank);

sim::EvalSummary evaluate_policy(const Recipe& recipe, const policy::PolicyParams& params,
                                 const sim::ScenarioFamily& family, const sim::FeaturePipeline& pipeline,
                                 std::uint64_t eval_seed);

/// Records with every feature map passed through the substitution rule,
/// appended after the originals. `manifest` receives one entry per swapped cell.
struct AugmentResult {
    std::vector<policy::TrainRecord> records;
    std::vector<concepts::MatchResult> manifest;
    std::vector<int> manifest_sample;  // sample index of each manifest entry
};
AugmentResult augment_records(const std::vector<policy::TrainRecord>& data, const concepts::ConceptBank& bank,
                              const concepts::SubstitutionRule& rule, std::uint64_t seed);

/// Rule replacing every cell by its best match over `subset` (threshold −∞),
/// or an identity rule when threshold is +∞.
concepts::SubstitutionRule text_swap_rule(double threshold);

struct SubsetRow {
    std::set<std::string> subset;
    double threshold = 0.0;
    sim::EvalSummary summary;
};

/// Evaluates the policy with image features swapped for text features matched
/// within each subset. Throws ValidationError on duplicate subsets or unknown names.
std::vector<SubsetRow> debug_concepts(const Recipe& recipe, const policy::PolicyParams& params,
                                      const sim::ScenarioFamily& family,
                                      std::shared_ptr<const concepts::ConceptBank> bank,
                                      const std::vector<std::set<std::string>>& subsets, double threshold,
                                      std::uint64_t eval_seed);

struct ClassifyConfig {
    int rollouts = 100;
    int train_rollouts = 10;
    int k = 4;
    int max_iter = 100;
    analysis::SvcConfig svc;
    std::uint64_t seed = 31;
};

struct ClassifyResult {
    analysis::ClusterModel clusters;
    analysis::LinearClassifier classifier;
    std::vector<concepts::MatchResult> anchors;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::array<double, kManeuverCount> class_accuracy{};  // test split
    std::array<int, kManeuverCount> class_counts{};       // test split
    int train_samples = 0;
    int test_samples = 0;
};

/// Rolls out `driver` with features kept, fits k-means on the cells of the
/// first `train_rollouts` rollouts, projects every frame onto center
/// distances, and trains a maneuver classifier on the same split.
ClassifyResult classify_maneuvers(const Recipe& recipe, const sim::Driver& driver, const sim::ScenarioFamily& family,
                                  const sim::FeaturePipeline& pipeline, const ClassifyConfig& config);

} // namespace ld::exp
