#pragma once

// Concept banks, nearest-concept search, and latent-space substitution.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "latentdrive/feature_map.hpp"

namespace ld::concepts {

struct Concept {
    std::string name;
    std::vector<float> vector;
};

/// Named unit-norm embeddings with source (matchable) and target (replacement) roles.
class ConceptBank {
public:
    ConceptBank() = default;
    /// Normalizes every vector; throws ValidationError on duplicates, zero vectors,
    /// mixed dimensions, or roles naming unknown entries.
    ConceptBank(std::vector<Concept> entries, std::set<std::string> sources, std::set<std::string> targets);

    int dim() const { return dim_; }
    std::size_t size() const { return entries_.size(); }
    const std::vector<Concept>& entries() const { return entries_; }
    const std::set<std::string>& sources() const { return sources_; }
    const std::set<std::string>& targets() const { return targets_; }

    bool contains(std::string_view name) const;
    /// Throws ValidationError for unknown names.
    std::span<const float> vector(std::string_view name) const;

    /// Same entries, source role restricted to `subset` (must be bank names).
    ConceptBank with_sources(const std::set<std::string>& subset) const;
    ConceptBank with_roles(const std::set<std::string>& sources, const std::set<std::string>& targets) const;

private:
    int dim_ = 0;
    std::vector<Concept> entries_;
    std::map<std::string, std::size_t, std::less<>> index_;
    std::set<std::string> sources_;
    std::set<std::string> targets_;
};

/// JSON-lines: {"name": str, "vector": [f32...], "roles": ["src"|"tgt", ...]}.
ConceptBank load_concept_bank(const std::filesystem::path& path);
void save_concept_bank(const std::filesystem::path& path, const ConceptBank& bank);

/// Deterministic unit vector for a concept name (stand-in for a text encoder).
std::vector<float> synth_text_encode(std::string_view name, std::uint64_t seed, int dim);

enum class Similarity { dot, cosine };
Similarity parse_similarity(std::string_view name);

double similarity(std::span<const float> a, std::span<const float> b, Similarity kind);

struct MatchResult {
    int cell = -1;
    std::string name;
    double score = 0.0;
};

/// argmax over the bank's source concepts; ties go to the lexicographically smallest name.
MatchResult match_concept(std::span<const float> feature, const ConceptBank& bank, Similarity kind);

/// argmax over every bank entry (used to anchor cluster centers).
MatchResult match_any(std::span<const float> feature, const ConceptBank& bank, Similarity kind);

/// Replacement function h: source name -> distribution over target names.
struct ReplacementMap {
    enum class Mode { identity, uniform, table };
    Mode mode = Mode::uniform;
    std::map<std::string, std::vector<std::pair<std::string, double>>> rows;

    static ReplacementMap identity() { return {Mode::identity, {}}; }
    static ReplacementMap uniform() { return {Mode::uniform, {}}; }
};

/// JSON object: source-name -> {target-name: weight}. Weights are normalized per row.
ReplacementMap load_replacement_map(const std::filesystem::path& path);
ReplacementMap parse_replacement_map(std::string_view json_text);

struct SubstitutionRule {
    Similarity similarity = Similarity::cosine;
    double threshold = 0.0;
    double swap_probability = 1.0;
    ReplacementMap replacement = ReplacementMap::uniform();

    /// Throws RuleError for probabilities outside [0,1], rows not summing to 1,
    /// or rows naming concepts outside the bank's source/target sets.
    void validate(const ConceptBank& bank) const;
};

struct SubstitutionResult {
    FeatureMap features;
    std::vector<MatchResult> applied;  // one entry per replaced cell; name is the inserted concept
    std::vector<MatchResult> matches;  // best source match of every cell

    std::size_t replaced() const { return applied.size(); }
};

/// Cell j draws from its own stream derived from (seed, j), so the per-cell
/// loop may run in any order or in parallel with identical results.
SubstitutionResult substitute(const FeatureMap& features, const ConceptBank& bank, const SubstitutionRule& rule,
                              std::uint64_t seed);

/// Serial reference for substitute.
SubstitutionResult substitute_serial(const FeatureMap& features, const ConceptBank& bank,
                                     const SubstitutionRule& rule, std::uint64_t seed);

/// Threshold-gated swap of image features for their best-matching text feature.
SubstitutionResult cross_modal_swap(const FeatureMap& features, const ConceptBank& bank, double threshold,
                                    Similarity kind = Similarity::cosine);

struct AugmentedSample {
    FeatureMap features;
    std::vector<MatchResult> manifest;
};

/// Independent substitution per sample, sample i seeded from (seed, i).
std::vector<AugmentedSample> augment_dataset(std::span<const FeatureMap> dataset, const ConceptBank& bank,
                                             const SubstitutionRule& rule, std::uint64_t seed);

} // namespace ld::concepts
