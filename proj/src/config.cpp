#include "latentdrive/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include "latentdrive/common.hpp"

namespace ld::cfg {

namespace {

using Json = nlohmann::json;

double to_double(const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size() || std::isnan(d)) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("expected a number, got '" + v + "'");
    }
}

long long to_int(const std::string& v) {
    try {
        std::size_t used = 0;
        const long long i = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError("expected an integer, got '" + v + "'");
    }
}

std::uint64_t to_u64(const std::string& v) {
    if (v.empty() || v.front() == '-') throw ConfigError("expected a non-negative integer, got '" + v + "'");
    try {
        std::size_t used = 0;
        const auto u = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return u;
    } catch (const std::exception&) {
        throw ConfigError("expected a non-negative integer, got '" + v + "'");
    }
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("expected a boolean, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

// Infinite thresholds are not representable in JSON.
Json number(double d) {
    if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
    return d;
}

struct Field {
    std::string section;
    std::string key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<Json(const ExperimentConfig&)> get;
};

#define LD_DOUBLE(sec, name, expr)                                                              \
    Field {                                                                                     \
        sec, name, [](ExperimentConfig& c, const std::string& v) { c.expr = to_double(v); },    \
            [](const ExperimentConfig& c) { return number(c.expr); }                            \
    }
#define LD_INT(sec, name, expr)                                                                                \
    Field {                                                                                                    \
        sec, name, [](ExperimentConfig& c, const std::string& v) { c.expr = static_cast<int>(to_int(v)); },    \
            [](const ExperimentConfig& c) { return Json(c.expr); }                                             \
    }
#define LD_BOOL(sec, name, expr)                                                              \
    Field {                                                                                   \
        sec, name, [](ExperimentConfig& c, const std::string& v) { c.expr = to_bool(v); },    \
            [](const ExperimentConfig& c) { return Json(c.expr); }                            \
    }
#define LD_STRING(sec, name, expr)                                                    \
    Field {                                                                           \
        sec, name, [](ExperimentConfig& c, const std::string& v) { c.expr = v; },     \
            [](const ExperimentConfig& c) { return Json(c.expr); }                    \
    }
#define LD_LIST(sec, name, expr)                                                              \
    Field {                                                                                   \
        sec, name, [](ExperimentConfig& c, const std::string& v) { c.expr = to_list(v); },    \
            [](const ExperimentConfig& c) { return Json(c.expr); }                            \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table{
        Field{"run", "seed",
              [](ExperimentConfig& c, const std::string& v) {
                  c.seed = to_u64(v);
                  c.seed_set = true;
              },
              [](const ExperimentConfig& c) { return Json(c.seed); }},
        Field{"run", "eval_seed", [](ExperimentConfig& c, const std::string& v) { c.eval_seed = to_u64(v); },
              [](const ExperimentConfig& c) { return Json(c.eval_seed); }},

        LD_STRING("paths", "weights", paths.weights),
        LD_STRING("paths", "bank", paths.bank),
        LD_STRING("paths", "policy", paths.policy),
        LD_STRING("paths", "replacement", paths.replacement),
        LD_STRING("paths", "output", paths.output),

        LD_INT("extract", "layer", extract.layer),
        LD_INT("extract", "rows", extract.rows),
        LD_INT("extract", "cols", extract.cols),
        LD_INT("extract", "cell_px", extract.cell_px),
        Field{"extract", "mask",
              [](ExperimentConfig& c, const std::string& v) { c.extract.mask.kind = mask::parse_mask_kind(v); },
              [](const ExperimentConfig& c) { return Json(mask::to_string(c.extract.mask.kind)); }},
        LD_DOUBLE("extract", "alpha", extract.mask.alpha),
        LD_DOUBLE("extract", "norm_order", extract.mask.norm_order),
        LD_DOUBLE("extract", "strength", extract.mask.strength),
        LD_BOOL("extract", "all_layers", extract.mask.all_layers),
        LD_INT("encoder", "dim", extract.encoder.dim),
        LD_INT("encoder", "key_dim", extract.encoder.key_dim),
        LD_INT("encoder", "mlp_dim", extract.encoder.mlp_dim),
        LD_INT("encoder", "layers", extract.encoder.layers),
        LD_INT("encoder", "patch_size", extract.encoder.patch_size),

        LD_DOUBLE("sim", "fov_deg", recipe.sim.fov_deg),
        LD_DOUBLE("sim", "dt", recipe.sim.dt),
        LD_INT("sim", "horizon", recipe.sim.horizon),
        LD_DOUBLE("sim", "speed", recipe.sim.speed),
        LD_DOUBLE("sim", "k_lateral", recipe.sim.k_lateral),
        LD_DOUBLE("sim", "k_heading", recipe.sim.k_heading),
        LD_DOUBLE("sim", "max_steering", recipe.sim.max_steering),
        LD_DOUBLE("sim", "trigger_distance", recipe.sim.trigger_distance),
        LD_DOUBLE("sim", "recovery_time", recipe.sim.recovery_time),
        LD_DOUBLE("sim", "pass_margin", recipe.sim.pass_margin),
        LD_BOOL("sim", "pass_left", recipe.sim.pass_left),

        LD_INT("scenario", "segments", recipe.train_family.segments),
        LD_DOUBLE("scenario", "lane_length", recipe.train_family.lane_length),
        LD_DOUBLE("scenario", "max_curvature", recipe.train_family.max_curvature),
        LD_DOUBLE("scenario", "half_width", recipe.train_family.half_width),
        LD_DOUBLE("scenario", "first_obstacle_min", recipe.train_family.first_obstacle_min),
        LD_DOUBLE("scenario", "first_obstacle_max", recipe.train_family.first_obstacle_max),
        LD_DOUBLE("scenario", "spacing_min", recipe.train_family.spacing_min),
        LD_DOUBLE("scenario", "spacing_max", recipe.train_family.spacing_max),
        LD_DOUBLE("scenario", "lateral_min", recipe.train_family.lateral_min),
        LD_DOUBLE("scenario", "lateral_max", recipe.train_family.lateral_max),
        LD_DOUBLE("scenario", "radius_min", recipe.train_family.radius_min),
        LD_DOUBLE("scenario", "radius_max", recipe.train_family.radius_max),
        LD_DOUBLE("scenario", "initial_offset_max", recipe.train_family.initial_offset_max),
        LD_DOUBLE("scenario", "initial_heading_max", recipe.train_family.initial_heading_max),
        LD_LIST("scenario", "obstacles", recipe.train_family.obstacle_concepts),
        LD_LIST("scenario", "offroad", recipe.train_family.offroad_concepts),

        LD_INT("train", "scenarios", recipe.train_scenarios),
        LD_DOUBLE("train", "control_noise", recipe.control_noise),
        LD_DOUBLE("train", "feature_noise", recipe.feature_noise),
        LD_INT("train", "epochs", recipe.train.epochs),
        LD_INT("train", "batch_size", recipe.train.batch_size),
        LD_DOUBLE("train", "lr", recipe.train.adam.lr),
        LD_INT("train", "hidden", recipe.train.shape.hidden),
        LD_BOOL("train", "linear", recipe.train.shape.linear),
        Field{"train", "seed", [](ExperimentConfig& c, const std::string& v) { c.recipe.train.seed = to_u64(v); },
              [](const ExperimentConfig& c) { return Json(c.recipe.train.seed); }},
        LD_INT("eval", "trials", recipe.trials),

        Field{"bank", "seed", [](ExperimentConfig& c, const std::string& v) { c.bank.seed = to_u64(v); },
              [](const ExperimentConfig& c) { return Json(c.bank.seed); }},
        LD_INT("bank", "dim", bank.dim),
        LD_DOUBLE("bank", "heldout_offset", bank.heldout_offset),

        Field{"rule", "similarity",
              [](ExperimentConfig& c, const std::string& v) { c.rule.similarity = concepts::parse_similarity(v); },
              [](const ExperimentConfig& c) {
                  return Json(c.rule.similarity == concepts::Similarity::cosine ? "cosine" : "dot");
              }},
        LD_DOUBLE("rule", "threshold", rule.threshold),
        LD_DOUBLE("rule", "swap_probability", rule.swap_probability),
        LD_LIST("rule", "sources", rule.sources),
        LD_LIST("rule", "targets", rule.targets),

        LD_INT("classify", "rollouts", classify.rollouts),
        LD_INT("classify", "train_rollouts", classify.train_rollouts),
        LD_INT("classify", "k", classify.k),
        LD_INT("classify", "max_iter", classify.max_iter),
        LD_DOUBLE("classify", "lambda", classify.svc.lambda),
        LD_INT("classify", "epochs", classify.svc.epochs),

        LD_STRING("service", "host", service.host),
        LD_INT("service", "port", service.port),
        LD_INT("service", "workers", service.workers),
        LD_STRING("service", "cors_origin", service.cors_origin),
    };
    return table;
}

#undef LD_DOUBLE
#undef LD_INT
#undef LD_BOOL
#undef LD_STRING
#undef LD_LIST

const Field& find_field(const std::string& section, const std::string& key) {
    for (const auto& f : fields())
        if (f.section == section && f.key == key) return f;
    throw ConfigError("unknown config key '" + section + "." + key + "'");
}

void apply(ExperimentConfig& c, const std::string& section, const std::string& key, const std::string& value) {
    try {
        find_field(section, key).set(c, value);
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        if (what.rfind("unknown config key", 0) == 0) throw;
        throw ConfigError(section + "." + key + ": " + what);
    } catch (const Error& e) {
        throw ConfigError(section + "." + key + ": " + e.what());
    }
}

void validate(const ExperimentConfig& c) {
    if (!c.seed_set) throw ConfigError("run.seed is required");
    c.extract.mask.validate();
    c.recipe.sim.validate();
    if (c.recipe.trials <= 0) throw ConfigError("eval.trials must be positive");
    if (c.recipe.train_scenarios <= 0) throw ConfigError("train.scenarios must be positive");
    if (c.recipe.feature_noise < 0.0 || c.recipe.control_noise < 0.0) throw ConfigError("noise levels must be non-negative");
    if (c.recipe.train.epochs <= 0 || c.recipe.train.batch_size <= 0 || c.recipe.train.shape.hidden <= 0)
        throw ConfigError("train.epochs, train.batch_size and train.hidden must be positive");
    if (c.service.workers <= 0) throw ConfigError("service.workers must be positive");
    if (c.service.port <= 0 || c.service.port > 65535) throw ConfigError("service.port out of range");
    if (c.rule.swap_probability < 0.0 || c.rule.swap_probability > 1.0)
        throw ConfigError("rule.swap_probability must lie in [0,1]");
}

} // namespace

nlohmann::json ExperimentConfig::to_json() const {
    Json j = Json::object();
    for (const auto& f : fields()) j[f.section][f.key] = f.get(*this);
    return j;
}

std::string ExperimentConfig::hash() const { return sha256_hex(to_json().dump()); }

Override parse_override(const std::string& text) {
    const auto eq = text.find('=');
    const auto dot = text.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0 || dot + 1 == eq)
        throw ConfigError("override must look like section.key=value, got '" + text + "'");
    return {text.substr(0, dot), text.substr(dot + 1, eq - dot - 1), text.substr(eq + 1)};
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& file, const std::vector<Override>& overrides) {
    ExperimentConfig c;
    if (file) {
        if (!std::filesystem::exists(*file)) throw ConfigError("config file not found: " + file->string());
        boost::property_tree::ptree tree;
        try {
            boost::property_tree::read_ini(file->string(), tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError(std::string("config parse error: ") + e.what());
        }
        for (const auto& [section, body] : tree) {
            if (body.empty()) throw ConfigError("config key '" + section + "' must live inside a [section]");
            for (const auto& [key, value] : body) apply(c, section, key, value.data());
        }
    }
    for (const auto& o : overrides) apply(c, o.section, o.key, o.value);
    validate(c);
    return c;
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 failed");
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return out.str();
}

void write_manifest(const std::filesystem::path& dir, const std::string& command, const ExperimentConfig& config,
                    const std::vector<std::string>& outputs) {
    std::filesystem::create_directories(dir);
    const Json manifest{{"command", command},
                        {"config_hash", config.hash()},
                        {"version", kVersion},
                        {"seed", config.seed},
                        {"outputs", outputs},
                        {"config", config.to_json()}};
    std::ofstream out(dir / "manifest.json");
    if (!out) throw LoadError("cannot write manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

} // namespace ld::cfg
