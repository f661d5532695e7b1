// Acceptance suite: one PASS/FAIL line per criterion. Tolerances and runtime
// budgets are fixed here; the exit status is non-zero if any line fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>

#include "latentdrive/concept_space.hpp"
#include "latentdrive/experiments.hpp"
#include "latentdrive/masked_extract.hpp"
#include "latentdrive/policy.hpp"
#include "latentdrive/rng.hpp"
#include "oracles.hpp"

#ifndef LATENTDRIVE_DATA_DIR
#define LATENTDRIVE_DATA_DIR "data"
#endif

using namespace ld;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kEvalSeed = 99;

// Tolerances.
constexpr double kSuppressionTol = 1e-4;
constexpr double kGradTol = 1e-5;
constexpr double kHeldoutMin = 0.8;
constexpr double kOneHotGap = 0.15;
constexpr double kAugmentGain = 0.05;
constexpr double kClassifierMin = 0.75;

struct Outcome {
    bool pass;
    std::string detail;
};

struct Criterion {
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

vit::EncoderConfig small_encoder(int layers) {
    vit::EncoderConfig c;
    c.dim = 16;
    c.key_dim = 8;
    c.mlp_dim = 24;
    c.layers = layers;
    return c;
}

mask::MaskConfig box(double alpha, double strength) {
    mask::MaskConfig m;
    m.alpha = alpha;
    m.strength = strength;
    return m;
}

// Trained once, shared by every experiment criterion; the first user pays.
struct Shared {
    exp::Recipe recipe;
    std::shared_ptr<const concepts::ConceptBank> bank =
        std::make_shared<const concepts::ConceptBank>(exp::embedding_bank());
    std::vector<policy::TrainRecord> data;
    std::optional<policy::PolicyParams> policy;

    const policy::PolicyParams& embedding_policy() {
        if (!policy) {
            data = exp::collect_teacher_data(recipe, recipe.train_family, *bank, recipe.seed);
            policy = exp::train_policy(recipe, data, *bank).params;
        }
        return *policy;
    }
};

Outcome masking_identity() {
    const auto w = vit::random_weights(small_encoder(3), 21);
    const auto img = oracle::random_image(16, 16, 21);  // 4x4 patches
    const auto full = vit::forward(w, img, 4);
    int mismatches = 0;
    for (int layer = 1; layer <= 3; ++layer)
        for (int j = 0; j < 16; ++j) mismatches += mask::extract_patch_feature(w, img, 4, layer, j, box(1e9, -1e4)) != full;
    return {mismatches == 0, fmt("%.0f of 48 anchors differ", mismatches)};
}

Outcome suppression() {
    double worst = 0.0;
    for (int c = 0; c < 20; ++c) {
        const int side = 2 + c % 3;  // N = 4, 9, 16
        const int layers = 1 + c % 3;
        const auto w = vit::random_weights(small_encoder(layers), 100 + c);
        const auto img = oracle::random_image(4 * side, 4 * side, 100 + c);
        const int layer = 1 + c % layers;
        const int n = side * side;
        const int j = c % n;
        const auto grid = vit::make_grid(4 * side, 4 * side, 4, 4);
        const auto m = mask::build_mask(j, grid, box(1.0 + c % 2, -1e6));
        const auto got = mask::extract_patch_feature(w, img, 4, layer, j, box(1.0 + c % 2, -1e6));
        worst = std::max(worst, oracle::max_rel_error(got, oracle::forward_retained(w, img, 4, layer, m.weights)));
    }
    return {worst < kSuppressionTol, fmt("max rel error %.2e over 20 cases", worst)};
}

Outcome dense_equivalence() {
    int bad = 0;
    for (int i = 0; i < 10; ++i) {
        const auto w = vit::random_weights(small_encoder(2), 300 + i);
        const int h = 8 + 4 * (i % 3), wd = 8 + 4 * ((i + 1) % 3);
        const auto img = oracle::random_image(h, wd, 300 + i);
        const int rows = (h - 4) / 2 + 1, cols = (wd - 4) / 2 + 1;
        mask::MaskConfig m;
        m.kind = i % 2 ? mask::MaskKind::exp_decay : mask::MaskKind::box;
        const auto dense = mask::extract_dense(w, img, 1 + i % 2, m, rows, cols);
        const int stride = mask::stride_for_grid(h, wd, 4, rows, cols);
        for (int j = 0; j < rows * cols; ++j) {
            const auto one = mask::extract_patch_feature(w, img, stride, 1 + i % 2, j, m);
            const auto cell = dense.cell(j);
            bad += !std::equal(one.begin(), one.end(), cell.begin(), cell.end());
        }
    }
    return {bad == 0, fmt("%.0f cells differ over 10 images", bad)};
}

Outcome gradient_check() {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        policy::PolicyShape s;
        s.rows = 3;
        s.cols = 2;
        s.dim = 6;
        s.hidden = 7;
        const auto p = policy::PolicyParams::random(s, seed);
        FeatureMap f(s.rows, s.cols, s.dim);
        Rng rng = make_rng(seed, {0x6763});
        for (auto& v : f.data) v = static_cast<float>(uniform01(rng) * 2 - 1);
        worst = std::max(worst, policy::finite_diff_check(p, f, 0.25, 1e-4, 60, seed));
    }
    return {worst < kGradTol, fmt("max rel error %.2e, 5 seeds x 60 parameters", worst)};
}

Outcome substitution_contracts() {
    const auto bank = exp::embedding_bank();
    FeatureMap f(8, 6, bank.dim());
    Rng rng = make_rng(404);
    std::normal_distribution<double> noise(0.0, 0.15);
    for (int j = 0; j < f.cells(); ++j) {
        const auto& e = bank.entries()[static_cast<std::size_t>(uniform01(rng) * bank.size())];
        for (int d = 0; d < f.dim; ++d) f.cell(j)[d] = static_cast<float>(e.vector[d] + noise(rng));
    }
    const bool identity = concepts::cross_modal_swap(f, bank, kInf).features.data == f.data;

    const auto all = concepts::cross_modal_swap(f, bank, -kInf);
    bool text_only = static_cast<int>(all.replaced()) == f.cells();
    for (int j = 0; j < f.cells(); ++j) {
        const auto cell = all.features.cell(j);
        const auto v = bank.vector(all.matches[j].name);
        text_only = text_only && std::equal(cell.begin(), cell.end(), v.begin(), v.end());
    }

    bool monotone = true;
    int previous = f.cells() + 1;
    std::string counts;
    for (double t : {-kInf, 0.0, 0.3, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, kInf}) {
        const int n = static_cast<int>(concepts::cross_modal_swap(f, bank, t).replaced());
        monotone = monotone && n <= previous;
        previous = n;
        counts += (counts.empty() ? "" : ",") + std::to_string(n);
    }
    return {identity && text_only && monotone,
            std::string(identity ? "" : "inf not identity; ") + (text_only ? "" : "-inf not text-only; ") +
                "sweep counts " + counts};
}

Outcome teacher_gate(Shared& s) {
    const auto r = sim::evaluate(sim::teacher_driver(s.recipe.sim), s.recipe.train_family, 100, kEvalSeed, s.recipe.sim,
                                 exp::pipeline_for(s.recipe, s.bank));
    return {r.mean == 1.0, fmt("teacher soft success %.3f over %.0f trials", r.mean, r.trials)};
}

Outcome heldout_palette(Shared& s) {
    const auto heldout = exp::heldout_obstacle_family(s.recipe.train_family);
    const auto emb = exp::evaluate_policy(s.recipe, s.embedding_policy(), heldout, exp::pipeline_for(s.recipe, s.bank),
                                          kEvalSeed);
    const auto onehot = std::make_shared<const concepts::ConceptBank>(exp::one_hot_bank(s.bank->dim()));
    const auto data = exp::collect_teacher_data(s.recipe, s.recipe.train_family, *onehot, s.recipe.seed);
    const auto base = exp::train_policy(s.recipe, data, *onehot).params;
    const auto oh = exp::evaluate_policy(s.recipe, base, heldout, exp::pipeline_for(s.recipe, onehot), kEvalSeed);
    return {emb.mean >= kHeldoutMin && emb.mean - oh.mean >= kOneHotGap,
            fmt("embedding %.3f, one-hot %.3f, gap %.3f", emb.mean, oh.mean, emb.mean - oh.mean)};
}

Outcome augmentation_gain(Shared& s) {
    const auto& base = s.embedding_policy();
    concepts::SubstitutionRule rule;
    rule.threshold = 0.7;
    rule.replacement = concepts::load_replacement_map(std::string(LATENTDRIVE_DATA_DIR) + "/replacement_tree.json");
    const auto roles = s.bank->with_roles({"tree"}, {"house", "shop"});
    const auto aug = exp::augment_records(s.data, roles, rule, s.recipe.seed);
    const auto augmented = exp::train_policy(s.recipe, aug.records, *s.bank).params;
    const auto ood = exp::ood_offroad_family(s.recipe.train_family);
    const auto pipeline = exp::pipeline_for(s.recipe, s.bank);
    const auto b = exp::evaluate_policy(s.recipe, base, ood, pipeline, kEvalSeed);
    const auto a = exp::evaluate_policy(s.recipe, augmented, ood, pipeline, kEvalSeed);
    return {a.mean - b.mean >= kAugmentGain,
            fmt("OOD unaugmented %.3f, augmented %.3f, gain %.3f", b.mean, a.mean, a.mean - b.mean)};
}

Outcome subset_debugging(Shared& s) {
    const auto& params = s.embedding_policy();
    const std::set<std::string> coarse{"car", "road", "tree", "sky"};
    const std::set<std::string> full{"car", "pedestrian", "cone", "road", "lane_edge", "tree", "sky"};
    const auto rows = exp::debug_concepts(s.recipe, params, s.recipe.train_family, s.bank, {coarse, full}, -kInf, kEvalSeed);
    const auto image = exp::debug_concepts(s.recipe, params, s.recipe.train_family, s.bank, {{}}, kInf, kEvalSeed);
    const auto baseline =
        exp::evaluate_policy(s.recipe, params, s.recipe.train_family, exp::pipeline_for(s.recipe, s.bank), kEvalSeed);
    const double c = rows[0].summary.mean, f = rows[1].summary.mean, i = image[0].summary.mean;
    return {f > c && i == baseline.mean && image[0].summary.soft_success == baseline.soft_success,
            fmt("coarse %.3f, full %.3f, image-only / baseline %.3f", c, f, baseline.mean > 0 ? i / baseline.mean : 0.0)};
}

Outcome maneuver_classifier(Shared& s) {
    const auto params = std::make_shared<const policy::PolicyParams>(s.embedding_policy());
    exp::ClassifyConfig config;  // k = 4, 10 train / 90 test rollouts
    const auto r = exp::classify_maneuvers(s.recipe, sim::policy_driver(params), s.recipe.train_family,
                                           exp::pipeline_for(s.recipe, s.bank), config);
    return {r.test_accuracy >= kClassifierMin,
            fmt("test accuracy %.3f on %.0f frames (train %.3f)", r.test_accuracy, r.test_samples, r.train_accuracy)};
}

} // namespace

int main() {
    Shared shared;
    const std::vector<Criterion> criteria{
        {"masking-identity", 1, masking_identity},
        {"suppression-limit", 5, suppression},
        {"dense-equivalence", 10, dense_equivalence},
        {"gradient-check", 10, gradient_check},
        {"substitution-contracts", 5, substitution_contracts},
        {"teacher-gate", 30, [&] { return teacher_gate(shared); }},
        {"heldout-palette-generalization", 300, [&] { return heldout_palette(shared); }},
        {"augmentation-ood-gain", 600, [&] { return augmentation_gain(shared); }},
        {"concept-subset-debugging", 300, [&] { return subset_debugging(shared); }},
        {"maneuver-classifier", 120, [&] { return maneuver_classifier(shared); }},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.budget_s;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::printf("%s %-32s %s; %.2fs (budget %.0fs)%s\n", pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs,
                    c.budget_s, in_time ? "" : " over budget");
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
