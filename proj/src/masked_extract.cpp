#include "latentdrive/masked_extract.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "latentdrive/common.hpp"

namespace ld::mask {

MaskKind parse_mask_kind(std::string_view name) {
    if (name == "box") return MaskKind::box;
    if (name == "exp_decay") return MaskKind::exp_decay;
    if (name == "inv_dist") return MaskKind::inv_dist;
    throw ConfigError("unknown mask kind '" + std::string(name) + "' (expected box, exp_decay, inv_dist)");
}

std::string to_string(MaskKind kind) {
    switch (kind) {
    case MaskKind::box: return "box";
    case MaskKind::exp_decay: return "exp_decay";
    case MaskKind::inv_dist: return "inv_dist";
    }
    throw ConfigError("unknown mask kind");
}

void MaskConfig::validate() const {
    if (!(strength < 0.0)) throw ConfigError("masking strength r must be negative");
    if (!(alpha >= 0.0)) throw ConfigError("box cutoff alpha must be non-negative");
    if (!(norm_order >= 1.0)) throw ConfigError("norm order z must be at least 1");
}

double patch_dist(int i, int j, const vit::PatchGrid& grid, double norm_order) {
    const int n = grid.size();
    if (i < 0 || i >= n || j < 0 || j >= n)
        throw IndexError("patch index outside 0.." + std::to_string(n - 1));
    const auto a = grid.coord(i);
    const auto b = grid.coord(j);
    const double dx = std::abs(a.x - b.x);
    const double dy = std::abs(a.y - b.y);
    if (norm_order == 1.0) return dx + dy;
    if (norm_order == 2.0) return std::hypot(dx, dy);
    if (std::isinf(norm_order)) return std::max(dx, dy);
    return std::pow(std::pow(dx, norm_order) + std::pow(dy, norm_order), 1.0 / norm_order);
}

AttentionMask build_mask(int j, const vit::PatchGrid& grid, const MaskConfig& config) {
    config.validate();
    const int n = grid.size();
    if (j < 0 || j >= n) throw IndexError("anchor patch " + std::to_string(j) + " outside grid");
    AttentionMask mask{std::vector<float>(static_cast<std::size_t>(n)), j};
    for (int i = 0; i < n; ++i) {
        const double dist = patch_dist(i, j, grid, config.norm_order);
        double m = 1.0;
        switch (config.kind) {
        case MaskKind::box: m = dist > config.alpha ? 0.0 : 1.0; break;
        case MaskKind::exp_decay: m = std::exp2(-dist); break;
        case MaskKind::inv_dist: m = i == j ? 1.0 : 1.0 / dist; break;
        }
        mask.weights[i] = static_cast<float>(m);
    }
    return mask;
}

Matrix masked_scores(const Matrix& scores, std::span<const float> mask, double strength) {
    if (!(strength < 0.0)) throw ConfigError("masking strength r must be negative");
    if (static_cast<int>(mask.size()) != scores.cols) throw DimensionError("mask length differs from score columns");
    const float r = static_cast<float>(strength);
    Matrix out = scores;
    for (int a = 0; a < out.rows; ++a) {
        auto row = out.row(a);
        for (int b = 0; b < out.cols; ++b) row[b] = row[b] + (1.0f - mask[b]) * r;
    }
    return out;
}

namespace {

void validate_region(std::span<const float> region, int n) {
    if (static_cast<int>(region.size()) != n)
        throw ValidationError("region mask has length " + std::to_string(region.size()) + ", grid has " +
                              std::to_string(n) + " patches");
    for (float v : region)
        if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("region mask entries must lie in [0,1]");
}

} // namespace

PatchExtractor::PatchExtractor(const vit::EncoderWeights& weights, const vit::Image& image, int stride, int layer)
    : weights_(weights), layer_(layer), prefix_(vit::forward_to_layer(weights, image, stride, layer)) {}

std::vector<float> PatchExtractor::extract(std::span<const float> mask, double strength, bool all_layers) const {
    validate_region(mask, prefix_.grid.size());
    Matrix scores = masked_scores(vit::attention_scores(prefix_.q, prefix_.k), mask, strength);
    Matrix h = vit::post_attention(prefix_, std::move(scores));
    if (!all_layers) return vit::encoder_suffix(weights_, std::move(h), layer_);
    std::vector<float> kept(mask.begin(), mask.end());
    return vit::encoder_suffix(weights_, std::move(h), layer_,
                               [kept, strength](Matrix& g) { g = masked_scores(g, kept, strength); });
}

std::vector<float> PatchExtractor::extract_patch(int j, const MaskConfig& config) const {
    const auto mask = build_mask(j, prefix_.grid, config);
    return extract(mask.weights, config.strength, config.all_layers);
}

std::vector<float> extract_patch_feature(const vit::EncoderWeights& weights, const vit::Image& image, int stride,
                                         int layer, int j, const MaskConfig& config) {
    return PatchExtractor(weights, image, stride, layer).extract_patch(j, config);
}

std::vector<float> extract_region_feature(const vit::EncoderWeights& weights, const vit::Image& image, int stride,
                                          int layer, std::span<const float> region, double strength,
                                          bool all_layers) {
    return PatchExtractor(weights, image, stride, layer).extract(region, strength, all_layers);
}

int stride_for_grid(int height, int width, int patch_size, int rows, int cols) {
    std::ostringstream valid;
    int fallback = 0;
    for (int s = 1; s <= patch_size; ++s) {
        const auto g = vit::make_grid(height, width, patch_size, s);
        if (g.rows == rows && g.cols == cols) {
            // prefer a stride whose windows reach the last pixel row and column
            if ((height - patch_size) % s == 0 && (width - patch_size) % s == 0) return s;
            if (!fallback) fallback = s;
        }
        valid << (s > 1 ? ", " : "") << "stride " << s << " -> " << g.rows << "x" << g.cols;
    }
    if (fallback) return fallback;
    throw ConfigError("target grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " is not achievable; valid: " + valid.str());
}

namespace {

FeatureMap empty_map(const vit::EncoderWeights& weights, int layer, const MaskConfig& config, int rows, int cols) {
    FeatureMap map(rows, cols, weights.config.dim);
    map.layer = layer;
    map.mask_kind = to_string(config.kind);
    map.strength = config.strength;
    return map;
}

} // namespace

FeatureMap extract_dense(const vit::EncoderWeights& weights, const vit::Image& image, int layer,
                         const MaskConfig& config, int rows, int cols) {
    config.validate();
    const int stride = stride_for_grid(image.height, image.width, weights.config.patch_size, rows, cols);
    const PatchExtractor extractor(weights, image, stride, layer);
    FeatureMap map = empty_map(weights, layer, config, rows, cols);
    const int n = map.cells();
    std::vector<std::vector<float>> cells(static_cast<std::size_t>(n));

#pragma omp parallel for schedule(dynamic)
    for (int j = 0; j < n; ++j) cells[j] = extractor.extract_patch(j, config);

    for (int j = 0; j < n; ++j) std::copy(cells[j].begin(), cells[j].end(), map.cell(j).begin());
    return map;
}

FeatureMap extract_dense_serial(const vit::EncoderWeights& weights, const vit::Image& image, int layer,
                                const MaskConfig& config, int rows, int cols) {
    config.validate();
    const int stride = stride_for_grid(image.height, image.width, weights.config.patch_size, rows, cols);
    FeatureMap map = empty_map(weights, layer, config, rows, cols);
    for (int j = 0; j < map.cells(); ++j) {
        const auto f = extract_patch_feature(weights, image, stride, layer, j, config);
        std::copy(f.begin(), f.end(), map.cell(j).begin());
    }
    return map;
}

} // namespace ld::mask
