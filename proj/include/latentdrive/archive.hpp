#pragma once

// Tensor archive: an 8-byte little-endian header length, a UTF-8 JSON header
// mapping tensor name -> {"dtype":"f32","shape":[...],"offset":bytes}, then one
// contiguous little-endian f32 payload. Offsets are relative to the payload
// start; tensors are non-overlapping and listed in ascending offset order.
// Free-form metadata lives under the reserved header key "__metadata__".

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace ld {

struct NamedTensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    std::int64_t element_count() const;
};

struct Archive {
    std::map<std::string, NamedTensor> tensors;
    nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

    const NamedTensor& at(const std::string& name) const;
};

inline constexpr const char* kMetadataKey = "__metadata__";

std::string encode_archive(const Archive& archive);
Archive decode_archive(const std::string& bytes);

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

} // namespace ld
