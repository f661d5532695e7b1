#pragma once

// Experiment configuration: an INI-style file with one section per module.
// Precedence: --set overrides > file > built-in defaults.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentdrive/concept_space.hpp"
#include "latentdrive/experiments.hpp"
#include "latentdrive/masked_extract.hpp"

namespace ld::cfg {

struct Paths {
    std::string weights;      // encoder archive (extract)
    std::string bank;         // concept bank JSONL; empty: built-in embedding bank
    std::string policy;       // policy archive; empty: train on demand
    std::string replacement;  // replacement map JSON for augment-train
    std::string output = "out";
};

struct ExtractSettings {
    int layer = 2;
    int rows = 8;
    int cols = 6;
    int cell_px = 4;
    mask::MaskConfig mask;
    vit::EncoderConfig encoder;  // used when no weights path is given to `make-weights`
};

struct RuleSettings {
    concepts::Similarity similarity = concepts::Similarity::cosine;
    double threshold = 0.7;
    double swap_probability = 1.0;
    std::vector<std::string> sources{"tree"};
    std::vector<std::string> targets{"house", "shop"};
};

struct ServiceSettings {
    std::string host = "127.0.0.1";
    int port = 8080;
    int workers = 2;
    std::string cors_origin = "*";
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::uint64_t eval_seed = 99;
    Paths paths;
    ExtractSettings extract;
    exp::Recipe recipe;
    exp::BankOptions bank;
    RuleSettings rule;
    exp::ClassifyConfig classify;
    ServiceSettings service;

    /// Canonical resolved form (sorted keys); hashed for manifests.
    nlohmann::json to_json() const;
    std::string hash() const;
};

/// "section.key=value".
struct Override {
    std::string section;
    std::string key;
    std::string value;
};
Override parse_override(const std::string& text);

/// Reads the file (if any), applies overrides, validates. Unknown sections or
/// keys and malformed values throw ConfigError. A seed is required.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& file, const std::vector<Override>& overrides);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view data);

/// Writes manifest.json next to a command's outputs.
void write_manifest(const std::filesystem::path& dir, const std::string& command, const ExperimentConfig& config,
                    const std::vector<std::string>& outputs);

inline constexpr const char* kVersion = "0.1.0";

} // namespace ld::cfg
