#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "jobvs/volume.hpp"

namespace jobvs {

/// 8-bit RGB raster, row-major.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;
};

/// Maximum-intensity projection along `axis`, min-max scaled to 0..255. A
/// mask, if given, is projected the same way and blended in red.
RgbImage render_mip(const Volume& vol, int axis, const LabelVolume* mask = nullptr, double alpha = 0.5);

void write_png(const RgbImage& img, const std::filesystem::path& path);

/// Writes <prefix>_mip_{x,y,z}.png and returns the paths. A trailing ".png"
/// on the prefix is dropped.
std::vector<std::filesystem::path> render_mips(const Volume& vol, const LabelVolume* mask,
                                               const std::filesystem::path& prefix);

}  // namespace jobvs
