#include "latentdrive/archive.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "latentdrive/common.hpp"

namespace ld {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

std::int64_t NamedTensor::element_count() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

const NamedTensor& Archive::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw LoadError("archive has no tensor '" + name + "'");
    return it->second;
}

std::string encode_archive(const Archive& archive) {
    nlohmann::ordered_json header = nlohmann::ordered_json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : archive.tensors) {
        if (t.element_count() != static_cast<std::int64_t>(t.data.size()))
            throw DimensionError("tensor '" + name + "': shape does not match element count");
        header[name] = {{"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}};
        offset += t.data.size() * sizeof(float);
    }
    if (!archive.metadata.empty()) header[kMetadataKey] = archive.metadata;

    const std::string text = header.dump();
    std::string out;
    out.reserve(8 + text.size() + offset);
    std::uint64_t len = text.size();
    char len_bytes[8];
    std::memcpy(len_bytes, &len, 8);
    out.append(len_bytes, 8);
    out += text;
    for (const auto& [name, t] : archive.tensors)
        out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
    return out;
}

Archive decode_archive(const std::string& bytes) {
    if (bytes.size() < 8) throw LoadError("archive truncated: missing header length");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data(), 8);
    if (len > bytes.size() - 8) throw LoadError("archive truncated: header length exceeds file size");

    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("malformed archive header: ") + e.what());
    }
    if (!header.is_object()) throw LoadError("malformed archive header: not a JSON object");

    const char* payload = bytes.data() + 8 + len;
    const std::uint64_t payload_size = bytes.size() - 8 - len;

    Archive archive;
    std::uint64_t previous_end = 0;
    for (const auto& [name, entry] : header.items()) {
        if (name == kMetadataKey) {
            archive.metadata = entry;
            continue;
        }
        try {
            if (entry.at("dtype").get<std::string>() != "f32")
                throw LoadError("tensor '" + name + "': unsupported dtype");
            NamedTensor t;
            t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
            for (auto d : t.shape)
                if (d < 0) throw LoadError("tensor '" + name + "': negative dimension");
            const auto offset = entry.at("offset").get<std::uint64_t>();
            const auto count = static_cast<std::uint64_t>(t.element_count());
            const auto nbytes = count * sizeof(float);
            if (offset < previous_end)
                throw LoadError("tensor '" + name + "': overlapping or out-of-order offset");
            if (offset + nbytes > payload_size)
                throw LoadError("tensor '" + name + "': declares " + std::to_string(count) +
                                " floats but payload holds " +
                                std::to_string(offset >= payload_size ? 0 : (payload_size - offset) / sizeof(float)));
            t.data.resize(count);
            std::memcpy(t.data.data(), payload + offset, nbytes);
            for (float v : t.data)
                if (!std::isfinite(v)) throw LoadError("tensor '" + name + "': non-finite value");
            previous_end = offset + nbytes;
            archive.tensors.emplace(name, std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw LoadError("tensor '" + name + "': malformed header entry (" + e.what() + ")");
        }
    }
    return archive;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot open '" + path.string() + "' for writing");
    const auto bytes = encode_archive(archive);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw LoadError("write failed for '" + path.string() + "'");
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open archive '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_archive(ss.str());
}

} // namespace ld
