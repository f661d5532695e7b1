#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "latentdrive/archive.hpp"

namespace ld {

/// Dense H'×W'×D patch-feature tensor. Cell j is row-stacked (j = row·cols + col).
struct FeatureMap {
    int rows = 0;
    int cols = 0;
    int dim = 0;
    std::vector<float> data;

    int layer = 0;          // extraction layer; 0 for synthetic scene embeddings
    std::string mask_kind;  // empty when not produced by masked extraction
    double strength = 0.0;  // masking strength r

    FeatureMap() = default;
    FeatureMap(int r, int c, int d) : rows(r), cols(c), dim(d), data(static_cast<std::size_t>(r) * c * d, 0.0f) {}

    int cells() const { return rows * cols; }
    std::span<float> cell(int j) { return {data.data() + static_cast<std::size_t>(j) * dim, static_cast<std::size_t>(dim)}; }
    std::span<const float> cell(int j) const {
        return {data.data() + static_cast<std::size_t>(j) * dim, static_cast<std::size_t>(dim)};
    }

    bool same_shape(const FeatureMap& other) const {
        return rows == other.rows && cols == other.cols && dim == other.dim;
    }
};

/// Tensor "features" [H',W',D]; metadata keys "layer", "mask_kind", "r".
Archive to_archive(const FeatureMap& map);
FeatureMap feature_map_from_archive(const Archive& archive);
void save_feature_map(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap load_feature_map(const std::filesystem::path& path);

} // namespace ld
