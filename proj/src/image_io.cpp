#include "latentdrive/image_io.hpp"

#include <array>
#include <cctype>
#include <fstream>
#include <string>

#include "latentdrive/common.hpp"
#include "latentdrive/rng.hpp"

namespace ld::img {

namespace {

// Next whitespace-separated header token, skipping '#' comments.
std::string token(std::istream& in) {
    std::string out;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!out.empty()) break;
            continue;
        }
        out.push_back(static_cast<char>(c));
    }
    return out;
}

int header_int(std::istream& in, const char* what, int min = 1) {
    const auto t = token(in);
    try {
        std::size_t used = 0;
        const int v = std::stoi(t, &used);
        if (used != t.size() || v < min) throw std::invalid_argument(t);
        return v;
    } catch (const std::exception&) {
        throw LoadError(std::string("ppm: bad ") + what + " '" + t + "'");
    }
}

} // namespace

vit::Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open image " + path.string());
    const auto magic = token(in);
    if (magic != "P6" && magic != "P3") throw LoadError("ppm: unsupported magic '" + magic + "' in " + path.string());
    const int width = header_int(in, "width");
    const int height = header_int(in, "height");
    const int maxval = header_int(in, "maxval");
    if (maxval > 65535) throw LoadError("ppm: maxval above 65535");

    vit::Image image(height, width);
    const std::size_t count = image.data.size();
    if (magic == "P3") {
        for (std::size_t i = 0; i < count; ++i) {
            const int v = header_int(in, "sample", 0);
            if (v > maxval) throw LoadError("ppm: sample above maxval");
            image.data[i] = static_cast<float>(v) / maxval;
        }
    } else {
        const int bytes = maxval < 256 ? 1 : 2;
        std::vector<unsigned char> raw(count * bytes);
        if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
            throw LoadError("ppm: truncated pixel data in " + path.string());
        for (std::size_t i = 0; i < count; ++i) {
            const int v = bytes == 1 ? raw[i] : (raw[2 * i] << 8) | raw[2 * i + 1];
            if (v > maxval) throw LoadError("ppm: sample above maxval");
            image.data[i] = static_cast<float>(v) / maxval;
        }
    }
    return image;
}

void write_ppm(const std::filesystem::path& path, const vit::Image& image) {
    image.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write image " + path.string());
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    for (float v : image.data) out.put(static_cast<char>(static_cast<int>(v * 255.0f + 0.5f)));
}

std::array<float, 3> concept_color(std::string_view name) {
    const std::uint64_t h = splitmix64(fnv1a(name));
    return {static_cast<float>((h & 0xff) / 255.0), static_cast<float>(((h >> 8) & 0xff) / 255.0),
            static_cast<float>(((h >> 16) & 0xff) / 255.0)};
}

vit::Image scene_image(const sim::ConceptGrid& grid, int cell_px) {
    if (cell_px <= 0) throw ConfigError("cell_px must be positive");
    vit::Image image(grid.rows * cell_px, grid.cols * cell_px);
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            const auto rgb = concept_color(grid.at(r, c));
            for (int y = 0; y < cell_px; ++y)
                for (int x = 0; x < cell_px; ++x) {
                    const float shade = ((x + y) % 2 == 0) ? 1.0f : 0.9f;
                    for (int ch = 0; ch < 3; ++ch) image.at(r * cell_px + y, c * cell_px + x, ch) = rgb[ch] * shade;
                }
        }
    return image;
}

} // namespace ld::img
