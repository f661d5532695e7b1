#pragma once

#include <array>
#include <filesystem>
#include <string_view>

#include "latentdrive/drivesim.hpp"
#include "latentdrive/vit.hpp"

namespace ld::img {

/// Binary (P6) or ASCII (P3) portable pixmap, any maxval up to 65535.
vit::Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const vit::Image& image);

/// Flat colour for a concept name, stable across runs.
std::array<float, 3> concept_color(std::string_view name);

/// Paints each grid cell as a cell_px × cell_px block with a faint per-pixel
/// checker so patches are not constant.
vit::Image scene_image(const sim::ConceptGrid& grid, int cell_px);

} // namespace ld::img
