#include "latentdrive/experiments.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "latentdrive/common.hpp"
#include "latentdrive/rng.hpp"

namespace ld::exp {

namespace {

std::vector<std::string> all_names() {
    std::vector<std::string> names = kSceneConcepts;
    names.insert(names.end(), kTrainedObstacles.begin(), kTrainedObstacles.end());
    names.insert(names.end(), kHeldOutObstacles.begin(), kHeldOutObstacles.end());
    return names;
}

std::set<std::string> name_set() {
    const auto names = all_names();
    return {names.begin(), names.end()};
}

} // namespace

concepts::ConceptBank embedding_bank(const BankOptions& options) {
    std::vector<concepts::Concept> entries;
    for (const auto& list : {kSceneConcepts, kTrainedObstacles})
        for (const auto& name : list) entries.push_back({name, concepts::synth_text_encode(name, options.seed, options.dim)});
    std::normal_distribution<double> normal;
    for (std::size_t i = 0; i < kHeldOutObstacles.size(); ++i) {
        const auto parent = concepts::synth_text_encode(kTrainedObstacles[i], options.seed, options.dim);
        Rng rng = make_rng(options.seed, {fnv1a(kHeldOutObstacles[i]), 0x68656c64});
        std::vector<double> noise(static_cast<std::size_t>(options.dim));
        double sq = 0.0;
        for (auto& v : noise) {
            v = normal(rng);
            sq += v * v;
        }
        std::vector<float> vec(parent.size());
        for (std::size_t k = 0; k < vec.size(); ++k)
            vec[k] = static_cast<float>(parent[k] + options.heldout_offset * noise[k] / std::sqrt(sq));
        entries.push_back({kHeldOutObstacles[i], std::move(vec)});
    }
    return {std::move(entries), name_set(), name_set()};
}

concepts::ConceptBank one_hot_bank(int dim) {
    const auto names = all_names();
    if (dim < static_cast<int>(names.size())) throw ConfigError("one-hot bank needs at least one slot per concept");
    std::vector<concepts::Concept> entries;
    for (std::size_t i = 0; i < names.size(); ++i) {
        std::vector<float> v(static_cast<std::size_t>(dim), 0.0f);
        v[i] = 1.0f;
        entries.push_back({names[i], std::move(v)});
    }
    return {std::move(entries), name_set(), name_set()};
}

Recipe::Recipe() {
    train_family.obstacle_concepts = kTrainedObstacles;
    train_family.offroad_concepts = {"tree"};
    train.epochs = 30;
    train.batch_size = 32;
    train.seed = 11;
}

sim::ScenarioFamily heldout_obstacle_family(const sim::ScenarioFamily& base) {
    auto f = base;
    f.obstacle_concepts = kHeldOutObstacles;
    return f;
}

sim::ScenarioFamily ood_offroad_family(const sim::ScenarioFamily& base) {
    auto f = base;
    f.offroad_concepts = {"house", "shop"};
    return f;
}

sim::FeaturePipeline pipeline_for(const Recipe& recipe, std::shared_ptr<const concepts::ConceptBank> bank) {
    sim::FeaturePipeline p;
    p.bank = std::move(bank);
    p.noise = recipe.feature_noise;
    return p;
}

std::vector<policy::TrainRecord> collect_teacher_data(const Recipe& recipe, const sim::ScenarioFamily& family,
                                                      const concepts::ConceptBank& bank, std::uint64_t seed) {
    if (recipe.train_scenarios <= 0) throw ConfigError("train_scenarios must be positive");
    const auto shared = std::make_shared<const concepts::ConceptBank>(bank);
    const auto pipeline = pipeline_for(recipe, shared);
    const auto teacher = sim::teacher_driver(recipe.sim);
    std::vector<std::vector<policy::TrainRecord>> per(static_cast<std::size_t>(recipe.train_scenarios));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < recipe.train_scenarios; ++i) {
        const auto scenario = family.generate(seed, i);
        sim::RolloutOptions options;
        options.horizon = recipe.sim.horizon;
        options.keep_features = true;
        options.control_noise = recipe.control_noise;
        options.initial = family.initial_state(seed, i, recipe.sim.speed);
        auto record = sim::rollout(teacher, scenario, recipe.sim, pipeline, options,
                                   derive_seed(seed, {0x636f6c6c, static_cast<std::uint64_t>(i)}));
        for (const auto& s : record.steps)
            per[i].push_back({std::move(record.features[s.feature_id]), s.teacher, s.label});
    }
    std::vector<policy::TrainRecord> out;
    for (auto& v : per)
        for (auto& r : v) out.push_back(std::move(r));
    return out;
}

policy::TrainResult train_policy(const Recipe& recipe, const std::vector<policy::TrainRecord>& data,
                                 const concepts::ConceptBank& bank) {
    auto config = recipe.train;
    config.shape.rows = recipe.sim.rows;
    config.shape.cols = recipe.sim.cols;
    config.shape.dim = bank.dim();
    config.shape.max_steering = recipe.sim.max_steering;
    return policy::train(data, config);
}

sim::EvalSummary evaluate_policy(const Recipe& recipe, const policy::PolicyParams& params,
                                 const sim::ScenarioFamily& family, const sim::FeaturePipeline& pipeline,
                                 std::uint64_t eval_seed) {
    const auto driver = sim::policy_driver(std::make_shared<const policy::PolicyParams>(params));
    return sim::evaluate(driver, family, recipe.trials, eval_seed, recipe.sim, pipeline);
}

AugmentResult augment_records(const std::vector<policy::TrainRecord>& data, const concepts::ConceptBank& bank,
                              const concepts::SubstitutionRule& rule, std::uint64_t seed) {
    rule.validate(bank);
    AugmentResult out;
    out.records = data;
    out.records.reserve(2 * data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto swapped = concepts::substitute(data[i].features, bank, rule, derive_seed(seed, {i}));
        for (auto& m : swapped.applied) {
            out.manifest.push_back(m);
            out.manifest_sample.push_back(static_cast<int>(i));
        }
        out.records.push_back({std::move(swapped.features), data[i].teacher, data[i].label});
    }
    return out;
}

concepts::SubstitutionRule text_swap_rule(double threshold) {
    concepts::SubstitutionRule rule;
    rule.threshold = threshold;
    rule.replacement = concepts::ReplacementMap::identity();
    return rule;
}

std::vector<SubsetRow> debug_concepts(const Recipe& recipe, const policy::PolicyParams& params,
                                      const sim::ScenarioFamily& family,
                                      std::shared_ptr<const concepts::ConceptBank> bank,
                                      const std::vector<std::set<std::string>>& subsets, double threshold,
                                      std::uint64_t eval_seed) {
    for (std::size_t i = 0; i < subsets.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (subsets[i] == subsets[j]) throw ValidationError("duplicate concept subset in debug list");
    const bool image_only = threshold == std::numeric_limits<double>::infinity();
    for (const auto& subset : subsets)
        if (subset.empty() && !image_only) throw ValidationError("an empty concept subset needs threshold inf");
    std::vector<SubsetRow> rows;
    for (const auto& subset : subsets) {
        auto pipeline = pipeline_for(recipe, bank);
        if (!image_only) {
            pipeline.substitution_bank = std::make_shared<const concepts::ConceptBank>(bank->with_sources(subset));
            pipeline.rule = text_swap_rule(threshold);
            pipeline.rule->validate(*pipeline.substitution_bank);
        } else {
            bank->with_sources(subset);  // name validation only
        }
        rows.push_back({subset, threshold, evaluate_policy(recipe, params, family, pipeline, eval_seed)});
    }
    return rows;
}

ClassifyResult classify_maneuvers(const Recipe& recipe, const sim::Driver& driver, const sim::ScenarioFamily& family,
                                  const sim::FeaturePipeline& pipeline, const ClassifyConfig& config) {
    if (config.train_rollouts <= 0 || config.train_rollouts >= config.rollouts)
        throw ConfigError("train_rollouts must lie strictly between 0 and rollouts");
    std::vector<sim::RolloutRecord> records(static_cast<std::size_t>(config.rollouts));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < config.rollouts; ++i) {
        sim::RolloutOptions options;
        options.horizon = recipe.sim.horizon;
        options.keep_features = true;
        options.initial = family.initial_state(config.seed, i, recipe.sim.speed);
        records[i] = sim::rollout(driver, family.generate(config.seed, i), recipe.sim, pipeline, options,
                                  derive_seed(config.seed, {0x636c73, static_cast<std::uint64_t>(i)}));
    }

    std::vector<FeatureMap> train_maps;
    for (int i = 0; i < config.train_rollouts; ++i)
        train_maps.insert(train_maps.end(), records[i].features.begin(), records[i].features.end());

    ClassifyResult out;
    out.clusters = analysis::kmeans(analysis::stack_cells(train_maps), config.k, config.seed, config.max_iter);
    out.anchors = analysis::anchor_clusters(out.clusters, *pipeline.bank);

    std::vector<std::vector<double>> xtr, xte;
    std::vector<int> ytr, yte;
    for (int i = 0; i < config.rollouts; ++i) {
        const bool train = i < config.train_rollouts;
        for (const auto& s : records[i].steps) {
            (train ? xtr : xte).push_back(analysis::project_map(records[i].features[s.feature_id], out.clusters));
            (train ? ytr : yte).push_back(static_cast<int>(s.label));
        }
    }
    out.classifier = analysis::train_linear_svc(xtr, ytr, config.svc);
    out.train_samples = static_cast<int>(xtr.size());
    out.test_samples = static_cast<int>(xte.size());
    out.train_accuracy = analysis::accuracy(out.classifier, xtr, ytr);
    out.test_accuracy = analysis::accuracy(out.classifier, xte, yte);
    std::array<int, kManeuverCount> hits{};
    for (std::size_t i = 0; i < xte.size(); ++i) {
        ++out.class_counts[yte[i]];
        hits[yte[i]] += out.classifier.predict(xte[i]) == yte[i];
    }
    for (int c = 0; c < kManeuverCount; ++c)
        out.class_accuracy[c] = out.class_counts[c] ? static_cast<double>(hits[c]) / out.class_counts[c] : 0.0;
    return out;
}

} // namespace ld::exp
