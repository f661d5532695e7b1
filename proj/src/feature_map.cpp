#include "latentdrive/feature_map.hpp"

#include "latentdrive/common.hpp"

namespace ld {

Archive to_archive(const FeatureMap& map) {
    Archive a;
    a.tensors["features"] = {{map.rows, map.cols, map.dim}, map.data};
    a.metadata = {{"layer", map.layer}, {"mask_kind", map.mask_kind}, {"r", map.strength}};
    return a;
}

FeatureMap feature_map_from_archive(const Archive& archive) {
    const auto& t = archive.at("features");
    if (t.shape.size() != 3) throw LoadError("tensor 'features': expected shape [H',W',D]");
    FeatureMap map(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), static_cast<int>(t.shape[2]));
    map.data = t.data;
    const auto& m = archive.metadata;
    if (m.is_object()) {
        map.layer = m.value("layer", 0);
        map.mask_kind = m.value("mask_kind", std::string());
        map.strength = m.value("r", 0.0);
    }
    return map;
}

void save_feature_map(const std::filesystem::path& path, const FeatureMap& map) { write_archive(path, to_archive(map)); }

FeatureMap load_feature_map(const std::filesystem::path& path) { return feature_map_from_archive(read_archive(path)); }

} // namespace ld
