#include "latentdrive/concept_space.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

#include "latentdrive/common.hpp"
#include "latentdrive/rng.hpp"

namespace ld::concepts {

namespace {

std::vector<float> normalized(const std::vector<float>& v, const std::string& name) {
    double sq = 0.0;
    for (float x : v) {
        if (!std::isfinite(x)) throw ValidationError("concept '" + name + "': non-finite component");
        sq += static_cast<double>(x) * x;
    }
    if (sq == 0.0) throw ValidationError("concept '" + name + "': zero vector");
    const double inv = 1.0 / std::sqrt(sq);
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] * inv);
    return out;
}

} // namespace

ConceptBank::ConceptBank(std::vector<Concept> entries, std::set<std::string> sources, std::set<std::string> targets)
    : sources_(std::move(sources)), targets_(std::move(targets)) {
    for (auto& e : entries) {
        if (e.name.empty()) throw ValidationError("concept with empty name");
        if (index_.count(e.name)) throw ValidationError("duplicate concept name '" + e.name + "'");
        if (dim_ == 0) dim_ = static_cast<int>(e.vector.size());
        if (static_cast<int>(e.vector.size()) != dim_ || dim_ == 0)
            throw ValidationError("concept '" + e.name + "' has dimension " + std::to_string(e.vector.size()) +
                                  ", expected " + std::to_string(dim_));
        e.vector = normalized(e.vector, e.name);
        index_.emplace(e.name, entries_.size());
        entries_.push_back(std::move(e));
    }
    for (const auto* roles : {&sources_, &targets_})
        for (const auto& n : *roles)
            if (!index_.count(n)) throw ValidationError("role references unknown concept '" + n + "'");
}

bool ConceptBank::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::span<const float> ConceptBank::vector(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown concept '" + std::string(name) + "'");
    return entries_[it->second].vector;
}

ConceptBank ConceptBank::with_sources(const std::set<std::string>& subset) const { return with_roles(subset, targets_); }

ConceptBank ConceptBank::with_roles(const std::set<std::string>& sources, const std::set<std::string>& targets) const {
    return ConceptBank(entries_, sources, targets);
}

ConceptBank load_concept_bank(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open concept bank '" + path.string() + "'");
    std::vector<Concept> entries;
    std::set<std::string> sources, targets;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Concept c{j.at("name").get<std::string>(), j.at("vector").get<std::vector<float>>()};
            for (const auto& role : j.value("roles", std::vector<std::string>{})) {
                if (role == "src") sources.insert(c.name);
                else if (role == "tgt") targets.insert(c.name);
                else throw LoadError("unknown role '" + role + "'");
            }
            entries.push_back(std::move(c));
        } catch (const nlohmann::json::exception& e) {
            throw LoadError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    try {
        return ConceptBank(std::move(entries), std::move(sources), std::move(targets));
    } catch (const ValidationError& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
}

void save_concept_bank(const std::filesystem::path& path, const ConceptBank& bank) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot open '" + path.string() + "' for writing");
    for (const auto& c : bank.entries()) {
        nlohmann::json roles = nlohmann::json::array();
        if (bank.sources().count(c.name)) roles.push_back("src");
        if (bank.targets().count(c.name)) roles.push_back("tgt");
        out << nlohmann::json{{"name", c.name}, {"vector", c.vector}, {"roles", roles}}.dump() << '\n';
    }
}

std::vector<float> synth_text_encode(std::string_view name, std::uint64_t seed, int dim) {
    if (name.empty()) throw ValidationError("concept name must be non-empty");
    if (dim <= 0) throw ConfigError("embedding dimension must be positive");
    Rng rng = make_rng(seed, {fnv1a(name), static_cast<std::uint64_t>(dim)});
    std::normal_distribution<double> normal;
    std::vector<double> v(static_cast<std::size_t>(dim));
    double sq = 0.0;
    for (auto& x : v) {
        x = normal(rng);
        sq += x * x;
    }
    const double inv = 1.0 / std::sqrt(sq);
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] * inv);
    return out;
}

Similarity parse_similarity(std::string_view name) {
    if (name == "dot") return Similarity::dot;
    if (name == "cosine") return Similarity::cosine;
    throw ConfigError("unknown similarity '" + std::string(name) + "' (expected dot or cosine)");
}

double similarity(std::span<const float> a, std::span<const float> b, Similarity kind) {
    if (a.size() != b.size()) throw DimensionError("similarity: vectors differ in dimension");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (kind == Similarity::dot) return dot;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

template <class Names>
MatchResult best_match(std::span<const float> feature, const ConceptBank& bank, Similarity kind, const Names& names) {
    if (names.empty()) throw ConfigError("concept search set is empty");
    if (static_cast<int>(feature.size()) != bank.dim())
        throw DimensionError("feature dimension " + std::to_string(feature.size()) + " differs from bank dimension " +
                             std::to_string(bank.dim()));
    MatchResult best{-1, {}, -std::numeric_limits<double>::infinity()};
    // `names` is iterated in lexicographic order; strict improvement keeps the smallest name on ties.
    for (const auto& name : names) {
        const double s = similarity(feature, bank.vector(name), kind);
        if (best.name.empty() || s > best.score) best = {-1, name, s};
    }
    return best;
}

} // namespace

MatchResult match_concept(std::span<const float> feature, const ConceptBank& bank, Similarity kind) {
    return best_match(feature, bank, kind, bank.sources());
}

MatchResult match_any(std::span<const float> feature, const ConceptBank& bank, Similarity kind) {
    std::set<std::string> all;
    for (const auto& c : bank.entries()) all.insert(c.name);
    return best_match(feature, bank, kind, all);
}

ReplacementMap parse_replacement_map(std::string_view json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("replacement map: ") + e.what());
    }
    if (!j.is_object()) throw LoadError("replacement map must be a JSON object");
    ReplacementMap map;
    map.mode = ReplacementMap::Mode::table;
    for (const auto& [source, row] : j.items()) {
        if (!row.is_object() || row.empty()) throw LoadError("replacement row '" + source + "' must be a non-empty object");
        double total = 0.0;
        std::vector<std::pair<std::string, double>> entries;
        for (const auto& [target, w] : row.items()) {
            if (!w.is_number() || w.get<double>() < 0.0)
                throw LoadError("replacement weight " + source + "->" + target + " must be a non-negative number");
            entries.emplace_back(target, w.get<double>());
            total += w.get<double>();
        }
        if (total <= 0.0) throw LoadError("replacement row '" + source + "' has zero total weight");
        for (auto& e : entries) e.second /= total;
        map.rows[source] = std::move(entries);
    }
    return map;
}

ReplacementMap load_replacement_map(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open replacement map '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_replacement_map(ss.str());
}

void SubstitutionRule::validate(const ConceptBank& bank) const {
    if (!(swap_probability >= 0.0 && swap_probability <= 1.0))
        throw RuleError("swap probability must lie in [0,1]");
    if (std::isnan(threshold)) throw RuleError("threshold is NaN");
    if (replacement.mode == ReplacementMap::Mode::uniform && bank.targets().empty())
        throw RuleError("uniform replacement needs a non-empty target set");
    if (replacement.mode == ReplacementMap::Mode::identity)
        for (const auto& n : bank.sources())
            if (!bank.targets().count(n)) throw RuleError("identity replacement needs source '" + n + "' in the target set");
    if (replacement.mode != ReplacementMap::Mode::table) return;
    for (const auto& [source, row] : replacement.rows) {
        if (!bank.sources().count(source)) throw RuleError("replacement key '" + source + "' is not a source concept");
        double total = 0.0;
        for (const auto& [target, w] : row) {
            if (!bank.targets().count(target))
                throw RuleError("replacement value '" + target + "' is not a target concept");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-9) throw RuleError("replacement row '" + source + "' does not sum to 1");
    }
}

namespace {

std::string draw_replacement(const MatchResult& match, const ConceptBank& bank, const ReplacementMap& h, Rng& rng) {
    switch (h.mode) {
    case ReplacementMap::Mode::identity: return match.name;
    case ReplacementMap::Mode::uniform: {
        const auto& targets = bank.targets();
        auto it = targets.begin();
        std::advance(it, static_cast<std::ptrdiff_t>(uniform01(rng) * targets.size()));
        return *it;
    }
    case ReplacementMap::Mode::table: {
        auto row = h.rows.find(match.name);
        if (row == h.rows.end())
            throw RuleError("no replacement row for matched source concept '" + match.name + "'");
        const double u = uniform01(rng);
        double acc = 0.0;
        for (const auto& [target, w] : row->second) {
            acc += w;
            if (u < acc) return target;
        }
        return row->second.back().first;
    }
    }
    throw RuleError("unknown replacement mode");
}

// Decision and replacement for one cell, from the cell's own stream.
struct CellOutcome {
    MatchResult match;
    std::optional<std::string> replacement;
};

CellOutcome process_cell(const FeatureMap& features, int j, const ConceptBank& bank, const SubstitutionRule& rule,
                         std::uint64_t seed) {
    CellOutcome out;
    out.match = match_concept(features.cell(j), bank, rule.similarity);
    out.match.cell = j;
    if (!(out.match.score >= rule.threshold)) return out;
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(j)});
    if (!(uniform01(rng) < rule.swap_probability)) return out;
    out.replacement = draw_replacement(out.match, bank, rule.replacement, rng);
    return out;
}

SubstitutionResult assemble(const FeatureMap& features, const ConceptBank& bank, std::vector<CellOutcome>& cells) {
    SubstitutionResult result{features, {}, {}};
    for (auto& c : cells) {
        if (c.replacement) {
            const auto v = bank.vector(*c.replacement);
            std::copy(v.begin(), v.end(), result.features.cell(c.match.cell).begin());
            result.applied.push_back({c.match.cell, *c.replacement, c.match.score});
        }
        result.matches.push_back(std::move(c.match));
    }
    return result;
}

void check_inputs(const FeatureMap& features, const ConceptBank& bank, const SubstitutionRule& rule) {
    if (features.dim != bank.dim())
        throw DimensionError("feature map dimension " + std::to_string(features.dim) + " differs from bank dimension " +
                             std::to_string(bank.dim()));
    rule.validate(bank);
}

} // namespace

SubstitutionResult substitute(const FeatureMap& features, const ConceptBank& bank, const SubstitutionRule& rule,
                              std::uint64_t seed) {
    check_inputs(features, bank, rule);
    const int n = features.cells();
    std::vector<CellOutcome> cells(static_cast<std::size_t>(n));
    std::string error;
#pragma omp parallel for schedule(static)
    for (int j = 0; j < n; ++j) {
        try {
            cells[j] = process_cell(features, j, bank, rule, seed);
        } catch (const Error& e) {
#pragma omp critical
            if (error.empty()) error = e.what();
        }
    }
    if (!error.empty()) throw RuleError(error);
    return assemble(features, bank, cells);
}

SubstitutionResult substitute_serial(const FeatureMap& features, const ConceptBank& bank,
                                     const SubstitutionRule& rule, std::uint64_t seed) {
    check_inputs(features, bank, rule);
    std::vector<CellOutcome> cells;
    for (int j = 0; j < features.cells(); ++j) cells.push_back(process_cell(features, j, bank, rule, seed));
    return assemble(features, bank, cells);
}

SubstitutionResult cross_modal_swap(const FeatureMap& features, const ConceptBank& bank, double threshold,
                                    Similarity kind) {
    SubstitutionRule rule;
    rule.similarity = kind;
    rule.threshold = threshold;
    rule.swap_probability = 1.0;
    rule.replacement = ReplacementMap::identity();
    return substitute_serial(features, bank, rule, 0);
}

std::vector<AugmentedSample> augment_dataset(std::span<const FeatureMap> dataset, const ConceptBank& bank,
                                             const SubstitutionRule& rule, std::uint64_t seed) {
    std::vector<AugmentedSample> out(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        auto r = substitute_serial(dataset[i], bank, rule, derive_seed(seed, {i}));
        out[i] = {std::move(r.features), std::move(r.applied)};
    }
    return out;
}

} // namespace ld::concepts
