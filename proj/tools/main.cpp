// latentdrive command-line entry point.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include <CLI11.hpp>

#include "latentdrive/analysis.hpp"
#include "latentdrive/common.hpp"
#include "latentdrive/config.hpp"
#include "latentdrive/experiments.hpp"
#include "latentdrive/image_io.hpp"
#include "latentdrive/masked_extract.hpp"
#include "latentdrive/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ld;

namespace {

constexpr int kOk = 0;
constexpr int kAssertFailed = 1;
constexpr int kConfigError = 2;

struct Globals {
    std::string config_file;
    std::vector<std::string> sets;
    std::string out;
};

cfg::ExperimentConfig resolve(const Globals& g) {
    std::vector<cfg::Override> overrides;
    for (const auto& s : g.sets) overrides.push_back(cfg::parse_override(s));
    if (!g.out.empty()) overrides.push_back({"paths", "output", g.out});
    std::optional<fs::path> file;
    if (!g.config_file.empty()) file = g.config_file;
    return cfg::load_config(file, overrides);
}

fs::path out_dir(const cfg::ExperimentConfig& c) {
    fs::path dir = c.paths.output;
    fs::create_directories(dir);
    return dir;
}

std::string num(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write " + path.string());
    out << text;
}

std::shared_ptr<const concepts::ConceptBank> load_bank(const cfg::ExperimentConfig& c) {
    return std::make_shared<const concepts::ConceptBank>(c.paths.bank.empty() ? exp::embedding_bank(c.bank)
                                                                              : concepts::load_concept_bank(c.paths.bank));
}

policy::PolicyParams obtain_policy(const cfg::ExperimentConfig& c, const concepts::ConceptBank& bank) {
    if (!c.paths.policy.empty()) {
        if (!fs::exists(c.paths.policy)) throw ConfigError("policy file not found: " + c.paths.policy);
        return policy::load_policy(c.paths.policy);
    }
    std::cerr << "no paths.policy given; training a policy from the teacher\n";
    const auto data = exp::collect_teacher_data(c.recipe, c.recipe.train_family, bank, c.seed);
    return exp::train_policy(c.recipe, data, bank).params;
}

sim::ScenarioFamily family_named(const cfg::ExperimentConfig& c, const std::string& name) {
    if (name == "train") return c.recipe.train_family;
    if (name == "heldout") return exp::heldout_obstacle_family(c.recipe.train_family);
    if (name == "ood") return exp::ood_offroad_family(c.recipe.train_family);
    throw ConfigError("unknown family '" + name + "' (expected train, heldout or ood)");
}

double parse_threshold(const std::string& s) {
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf" || s == "null") return -std::numeric_limits<double>::infinity();
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("bad threshold '" + s + "'");
}

std::string breakdown_csv(const sim::EvalSummary& s) {
    return num(s.breakdown[0]) + "," + num(s.breakdown[1]) + "," + num(s.breakdown[2]);
}

// ---------------------------------------------------------------------------

int cmd_extract(const Globals& g, const std::string& image_path, const std::string& scene) {
    const auto c = resolve(g);
    if (c.paths.weights.empty()) throw ConfigError("paths.weights is required for extract");
    if (!fs::exists(c.paths.weights)) throw ConfigError("weights file not found: " + c.paths.weights);
    if (image_path.empty() == scene.empty()) throw ConfigError("give exactly one of --image or --scene");
    const auto weights = vit::load_weights(c.paths.weights);

    vit::Image image;
    if (!image_path.empty()) {
        image = image_path.ends_with(".ppm") ? img::read_ppm(image_path) : throw ConfigError("images must be .ppm files");
    } else {
        std::string family = "train";
        std::string index = scene;
        if (const auto colon = scene.find(':'); colon != std::string::npos) {
            family = scene.substr(0, colon);
            index = scene.substr(colon + 1);
        }
        int i = 0;
        try {
            i = std::stoi(index);
        } catch (const std::exception&) {
            throw ConfigError("scene id must be N or family:N, got '" + scene + "'");
        }
        const auto f = family_named(c, family);
        auto sim_config = c.recipe.sim;
        sim_config.rows = c.extract.rows;
        sim_config.cols = c.extract.cols;
        const auto grid = sim::render_concept_grid(f.initial_state(c.seed, i, sim_config.speed), f.generate(c.seed, i), sim_config);
        image = img::scene_image(grid, c.extract.cell_px);
    }
    const auto map = mask::extract_dense(weights, image, c.extract.layer, c.extract.mask, c.extract.rows, c.extract.cols);
    const auto dir = out_dir(c);
    save_feature_map(dir / "features.ldt", map);
    cfg::write_manifest(dir, "extract", c, {"features.ldt"});
    std::cout << "wrote " << (dir / "features.ldt").string() << " (" << map.rows << "x" << map.cols << "x" << map.dim << ")\n";
    return kOk;
}

int cmd_make_weights(const Globals& g) {
    const auto c = resolve(g);
    const fs::path path = c.paths.weights.empty() ? out_dir(c) / "encoder.ldt" : fs::path(c.paths.weights);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    vit::save_weights(path, vit::random_weights(c.extract.encoder, c.seed));
    std::cout << "wrote " << path.string() << "\n";
    return kOk;
}

int cmd_make_bank(const Globals& g, const std::string& kind) {
    if (kind != "onehot" && kind != "embedding") throw ConfigError("bank kind must be embedding or onehot");
    const auto c = resolve(g);
    const auto dir = out_dir(c);
    const auto bank = kind == "onehot" ? exp::one_hot_bank(c.bank.dim) : exp::embedding_bank(c.bank);
    concepts::save_concept_bank(dir / "bank.jsonl", bank);
    cfg::write_manifest(dir, "make-bank", c, {"bank.jsonl"});
    std::cout << "wrote " << (dir / "bank.jsonl").string() << " (" << bank.size() << " concepts)\n";
    return kOk;
}

int cmd_rollout(const Globals& g, int scene, const std::string& family, const std::string& driver_name) {
    const auto c = resolve(g);
    const auto bank = load_bank(c);
    const auto f = family_named(c, family);
    sim::Driver driver;
    if (driver_name == "teacher") driver = sim::teacher_driver(c.recipe.sim);
    else if (driver_name == "policy") driver = sim::policy_driver(std::make_shared<const policy::PolicyParams>(obtain_policy(c, *bank)));
    else throw ConfigError("driver must be teacher or policy");
    const auto record = sim::run_trial(driver, f, scene, c.eval_seed, c.recipe.sim, exp::pipeline_for(c.recipe, bank));
    const auto dir = out_dir(c);
    write_text(dir / "rollout.jsonl", sim::rollout_jsonl(record));
    write_text(dir / "scenario.json", sim::to_json(f.generate(c.eval_seed, scene)).dump(2) + "\n");
    cfg::write_manifest(dir, "rollout", c, {"rollout.jsonl", "scenario.json"});
    std::cout << "soft_success " << num(record.soft_success)
              << (record.failure ? " failure " + sim::to_string(*record.failure) : std::string()) << "\n";
    return kOk;
}

int cmd_train(const Globals& g) {
    const auto c = resolve(g);
    const auto bank = load_bank(c);
    const auto data = exp::collect_teacher_data(c.recipe, c.recipe.train_family, *bank, c.seed);
    const auto result = exp::train_policy(c.recipe, data, *bank);
    const auto dir = out_dir(c);
    policy::save_policy(dir / "policy.ldt", result.params);
    std::string curve = "epoch,loss,lr\n";
    for (std::size_t e = 0; e < result.loss_curve.size(); ++e)
        curve += std::to_string(e + 1) + "," + num(result.loss_curve[e]) + "," + num(result.lr_curve[e]) + "\n";
    write_text(dir / "loss_curve.csv", curve);
    const auto summary = exp::evaluate_policy(c.recipe, result.params, c.recipe.train_family,
                                              exp::pipeline_for(c.recipe, bank), c.eval_seed);
    cfg::write_manifest(dir, "train", c, {"policy.ldt", "loss_curve.csv"});
    std::cout << "records " << data.size() << " final loss " << num(result.loss_curve.back()) << " soft_success "
              << num(summary.mean) << "\n";
    return kOk;
}

int cmd_sweep(const Globals& g, const std::vector<std::string>& thresholds, bool check) {
    const auto c = resolve(g);
    const auto bank = load_bank(c);
    const auto params = obtain_policy(c, *bank);
    const std::set<std::string> all(bank->sources().begin(), bank->sources().end());
    std::vector<std::pair<double, std::string>> sorted;
    for (const auto& t : thresholds) sorted.emplace_back(parse_threshold(t), t);
    std::sort(sorted.begin(), sorted.end());

    // Replacement counts are compared on one fixed set of frames; closed-loop runs visit different states.
    const auto probe = exp::collect_teacher_data(c.recipe, c.recipe.train_family, *bank, c.eval_seed);
    const auto probe_bank = std::make_shared<const concepts::ConceptBank>(bank->with_sources(all));

    std::string csv = "threshold,mean,std,trials\n";
    json counts = json::array();
    long previous = -1;
    bool ok = true;
    for (const auto& [t, text] : sorted) {
        const auto row = exp::debug_concepts(c.recipe, params, c.recipe.train_family, bank, {all}, t, c.eval_seed).front();
        csv += num(t) + "," + num(row.summary.mean) + "," + num(row.summary.stddev) + "," +
               std::to_string(row.summary.trials) + "\n";
        long replaced = 0;
        const auto rule = exp::text_swap_rule(t);
        for (std::size_t i = 0; i < probe.size(); ++i)
            replaced += static_cast<long>(concepts::substitute(probe[i].features, *probe_bank, rule, i).applied.size());
        if (previous >= 0 && replaced > previous) ok = false;
        previous = replaced;
        counts.push_back({{"threshold", num(t)}, {"replaced_cells", replaced}, {"rollout_replaced_cells", row.summary.replaced_cells}});
        std::cout << num(t) << " mean " << num(row.summary.mean) << " replaced " << replaced << "\n";
    }
    const auto dir = out_dir(c);
    write_text(dir / "sweep.csv", csv);
    write_text(dir / "sweep_counts.json", counts.dump(2) + "\n");
    cfg::write_manifest(dir, "sweep-threshold", c, {"sweep.csv", "sweep_counts.json"});
    if (check && !ok) {
        std::cerr << "assertion failed: replacement counts increased with the threshold\n";
        return kAssertFailed;
    }
    return kOk;
}

std::set<std::string> parse_subset(const std::string& text) {
    std::set<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty() && !out.insert(item).second)
            throw ConfigError("duplicate concept '" + item + "' in subset '" + text + "'");
    return out;
}

std::string subset_name(const std::set<std::string>& s) {
    std::string out;
    for (const auto& n : s) out += (out.empty() ? "" : "+") + n;
    return out.empty() ? "{}" : out;
}

int cmd_debug(const Globals& g, const std::vector<std::string>& subsets_text, const std::string& threshold_text,
              const std::string& family, bool check) {
    const auto c = resolve(g);
    const auto bank = load_bank(c);
    std::vector<std::set<std::string>> subsets;
    for (const auto& s : subsets_text) {
        auto parsed = parse_subset(s);
        if (std::find(subsets.begin(), subsets.end(), parsed) != subsets.end())
            throw ConfigError("subset '" + s + "' given twice");
        subsets.push_back(std::move(parsed));
    }
    for (const auto& s : subsets)
        for (const auto& n : s)
            if (!bank->contains(n)) throw ConfigError("unknown concept '" + n + "' in subset");
    const double threshold = parse_threshold(threshold_text);
    const auto params = obtain_policy(c, *bank);
    const auto rows = exp::debug_concepts(c.recipe, params, family_named(c, family), bank, subsets, threshold, c.eval_seed);

    std::string csv = "subset,threshold,soft_success,std,lane_stable,avoidance,recovery\n";
    json history = json::array();
    for (const auto& r : rows) {
        csv += subset_name(r.subset) + "," + num(threshold) + "," + num(r.summary.mean) + "," + num(r.summary.stddev) + "," +
               breakdown_csv(r.summary) + "\n";
        history.push_back({{"subset", r.subset}, {"threshold", num(threshold)}, {"soft_success", r.summary.mean},
                           {"breakdown", r.summary.breakdown}});
        std::cout << subset_name(r.subset) << " " << num(r.summary.mean) << "\n";
    }
    const auto dir = out_dir(c);
    write_text(dir / "debug_concepts.csv", csv);
    write_text(dir / "debug_concepts.json", history.dump(2) + "\n");
    cfg::write_manifest(dir, "debug-concepts", c, {"debug_concepts.csv", "debug_concepts.json"});

    bool ok = true;
    for (const auto& a : rows)
        for (const auto& b : rows)
            if (a.subset != b.subset && std::includes(b.subset.begin(), b.subset.end(), a.subset.begin(), a.subset.end()) &&
                b.summary.mean < a.summary.mean) {
                std::cerr << "assertion failed: " << subset_name(b.subset) << " scores below its subset "
                          << subset_name(a.subset) << "\n";
                ok = false;
            }
    return check && !ok ? kAssertFailed : kOk;
}

int cmd_augment(const Globals& g, bool check) {
    const auto c = resolve(g);
    const auto bank = load_bank(c);
    concepts::SubstitutionRule rule;
    rule.similarity = c.rule.similarity;
    rule.threshold = c.rule.threshold;
    rule.swap_probability = c.rule.swap_probability;
    if (c.paths.replacement.empty()) {
        rule.replacement = concepts::ReplacementMap::uniform();
    } else {
        if (!fs::exists(c.paths.replacement)) throw ConfigError("replacement file not found: " + c.paths.replacement);
        rule.replacement = concepts::load_replacement_map(c.paths.replacement);
    }
    const auto roles = bank->with_roles({c.rule.sources.begin(), c.rule.sources.end()},
                                        {c.rule.targets.begin(), c.rule.targets.end()});

    const auto data = exp::collect_teacher_data(c.recipe, c.recipe.train_family, *bank, c.seed);
    const auto aug = exp::augment_records(data, roles, rule, c.seed);
    const auto base = exp::train_policy(c.recipe, data, *bank);
    const auto augmented = exp::train_policy(c.recipe, aug.records, *bank);

    const auto pipeline = exp::pipeline_for(c.recipe, bank);
    std::string csv = "family,policy,soft_success,std,lane_stable,avoidance,recovery\n";
    double base_ood = 0.0, aug_ood = 0.0;
    for (const std::string family : {"train", "ood"}) {
        const auto f = family_named(c, family);
        const auto sb = exp::evaluate_policy(c.recipe, base.params, f, pipeline, c.eval_seed);
        const auto sa = exp::evaluate_policy(c.recipe, augmented.params, f, pipeline, c.eval_seed);
        csv += family + ",baseline," + num(sb.mean) + "," + num(sb.stddev) + "," + breakdown_csv(sb) + "\n";
        csv += family + ",augmented," + num(sa.mean) + "," + num(sa.stddev) + "," + breakdown_csv(sa) + "\n";
        if (family == "ood") {
            base_ood = sb.mean;
            aug_ood = sa.mean;
        }
        std::cout << family << " baseline " << num(sb.mean) << " augmented " << num(sa.mean) << "\n";
    }
    const auto dir = out_dir(c);
    std::string manifest;
    for (std::size_t i = 0; i < aug.manifest.size(); ++i)
        manifest += json{{"sample", aug.manifest_sample[i]}, {"cell", aug.manifest[i].cell},
                         {"inserted", aug.manifest[i].name}, {"score", aug.manifest[i].score}}
                        .dump() +
                    "\n";
    write_text(dir / "augment_manifest.jsonl", manifest);
    write_text(dir / "augment_eval.csv", csv);
    policy::save_policy(dir / "policy_baseline.ldt", base.params);
    policy::save_policy(dir / "policy_augmented.ldt", augmented.params);
    cfg::write_manifest(dir, "augment-train", c,
                        {"augment_manifest.jsonl", "augment_eval.csv", "policy_baseline.ldt", "policy_augmented.ldt"});
    std::cout << "augmented cells " << aug.manifest.size() << "\n";
    if (check && !(aug_ood > base_ood)) {
        std::cerr << "assertion failed: augmented policy does not beat the baseline on OOD scenes\n";
        return kAssertFailed;
    }
    return kOk;
}

int cmd_classify(const Globals& g) {
    const auto c = resolve(g);
    const auto bank = load_bank(c);
    const auto params = std::make_shared<const policy::PolicyParams>(obtain_policy(c, *bank));
    const auto result = exp::classify_maneuvers(c.recipe, sim::policy_driver(params), c.recipe.train_family,
                                                exp::pipeline_for(c.recipe, bank), c.classify);
    const auto dir = out_dir(c);

    Archive maps;
    json sidecar{{"classes", json::array()}, {"anchors", json::array()}, {"rows", params->shape.rows},
                 {"cols", params->shape.cols}, {"k", result.clusters.k}};
    for (std::size_t ci = 0; ci < result.classifier.classes.size(); ++ci) {
        const auto label = to_string(static_cast<Maneuver>(result.classifier.classes[ci]));
        sidecar["classes"].push_back(label);
        for (int k = 0; k < result.clusters.k; ++k) {
            const auto m = analysis::coefficient_map(result.classifier, params->shape.rows, params->shape.cols,
                                                     static_cast<int>(ci), k, result.clusters.k);
            maps.tensors[label + "/" + std::to_string(k)] = {{params->shape.rows, params->shape.cols},
                                                              std::vector<float>(m.begin(), m.end())};
        }
    }
    for (const auto& a : result.anchors) sidecar["anchors"].push_back({{"cluster", a.cell}, {"name", a.name}, {"score", a.score}});
    write_archive(dir / "coefficient_maps.ldt", maps);
    write_text(dir / "coefficient_maps.json", sidecar.dump(2) + "\n");

    json report{{"train_accuracy", result.train_accuracy}, {"test_accuracy", result.test_accuracy},
                {"train_samples", result.train_samples}, {"test_samples", result.test_samples}};
    for (auto m : kManeuvers) {
        report["class_accuracy"][to_string(m)] = result.class_accuracy[static_cast<int>(m)];
        std::cout << to_string(m) << " accuracy " << num(result.class_accuracy[static_cast<int>(m)]) << " ("
                  << result.class_counts[static_cast<int>(m)] << " test frames)\n";
    }
    write_text(dir / "classify_report.json", report.dump(2) + "\n");
    cfg::write_manifest(dir, "classify", c, {"coefficient_maps.ldt", "coefficient_maps.json", "classify_report.json"});
    std::cout << "test accuracy " << num(result.test_accuracy) << "\n";
    for (const auto& a : result.anchors) std::cout << "cluster " << a.cell << " ~ " << a.name << "\n";
    return kOk;
}

int cmd_serve(const Globals& g) {
    const auto c = resolve(g);
    service::Service svc(service::make_session(c));
    std::cout << "serving on http://" << c.service.host << ":" << c.service.port << "/api (config " << svc.config_hash()
              << ")" << std::endl;
    service::serve(svc, c.service.host, c.service.port, c.service.cors_origin);
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"latentdrive: patch features, latent-space substitution and closed-loop driving experiments"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("-c,--config", g.config_file, "INI config file");
    app.add_option("--set", g.sets, "override, section.key=value (repeatable)");
    app.add_option("-o,--out", g.out, "output directory (paths.output)");

    std::function<int()> run;

    auto* extract = app.add_subcommand("extract", "dense patch features of an image or synthetic scene");
    std::string image_path, scene;
    extract->add_option("--image", image_path, "PPM image");
    extract->add_option("--scene", scene, "synthetic scene id: N or family:N");
    extract->callback([&] { run = [&] { return cmd_extract(g, image_path, scene); }; });

    auto* weights = app.add_subcommand("make-weights", "write seeded random encoder weights");
    weights->callback([&] { run = [&] { return cmd_make_weights(g); }; });

    auto* bank = app.add_subcommand("make-bank", "write the built-in concept bank as JSONL");
    std::string bank_kind = "embedding";
    bank->add_option("--kind", bank_kind, "embedding or onehot");
    bank->callback([&] { run = [&] { return cmd_make_bank(g, bank_kind); }; });

    auto* rollout = app.add_subcommand("rollout", "one closed-loop rollout as JSON lines");
    int scene_index = 0;
    std::string family = "train", driver = "teacher";
    rollout->add_option("--scene", scene_index, "scenario index");
    rollout->add_option("--family", family, "train, heldout or ood");
    rollout->add_option("--driver", driver, "teacher or policy");
    rollout->callback([&] { run = [&] { return cmd_rollout(g, scene_index, family, driver); }; });

    auto* train = app.add_subcommand("train", "behavior-clone the teacher");
    train->callback([&] { run = [&] { return cmd_train(g); }; });

    bool no_check = false;
    auto* sweep = app.add_subcommand("sweep-threshold", "cross-modal swap over a list of thresholds");
    std::vector<std::string> thresholds{"-inf", "0.5", "0.8", "0.9", "0.95", "inf"};
    sweep->add_option("--thresholds", thresholds, "thresholds (numbers, inf, -inf)")->delimiter(',');
    sweep->add_flag("--no-check", no_check, "do not assert monotone replacement counts");
    sweep->callback([&] { run = [&] { return cmd_sweep(g, thresholds, !no_check); }; });

    auto* debug = app.add_subcommand("debug-concepts", "evaluate with features swapped within concept subsets");
    std::vector<std::string> subsets;
    std::string debug_threshold = "-inf", debug_family = "train";
    debug->add_option("--subset", subsets, "comma-separated concept names (repeatable)")->required();
    debug->add_option("--threshold", debug_threshold, "similarity threshold (default -inf)");
    debug->add_option("--family", debug_family, "train, heldout or ood");
    debug->add_flag("--no-check", no_check, "do not assert superset dominance");
    debug->callback([&] { run = [&] { return cmd_debug(g, subsets, debug_threshold, debug_family, !no_check); }; });

    auto* augment = app.add_subcommand("augment-train", "train with latent-space augmentation and compare on OOD scenes");
    augment->add_flag("--no-check", no_check, "do not assert the OOD improvement");
    augment->callback([&] { run = [&] { return cmd_augment(g, !no_check); }; });

    auto* classify = app.add_subcommand("classify", "k-means + linear maneuver classifier with coefficient maps");
    classify->callback([&] { run = [&] { return cmd_classify(g); }; });

    auto* serve = app.add_subcommand("serve", "HTTP API for the debugging console");
    serve->callback([&] { run = [&] { return cmd_serve(g); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }
    try {
        return run();
    } catch (const ld::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    }
}
