#include "jobvs/render.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <limits>
#include <memory>

namespace jobvs {

RgbImage render_mip(const Volume& vol, int axis, const LabelVolume* mask, double alpha) {
  if (axis < 0 || axis > 2) throw UsageError("projection axis must be 0, 1 or 2");
  if (mask && mask->shape() != vol.shape()) throw DataError("render: mask shape does not match the image");
  const Shape3 s = vol.shape();
  // Image axes are the two remaining volume axes, lower index horizontal.
  const int u = axis == 0 ? 1 : 0;
  const int v = axis == 2 ? 1 : 2;
  RgbImage img;
  img.width = s[u];
  img.height = s[v];
  std::vector<float> mip(img.width * img.height, -std::numeric_limits<float>::infinity());
  std::vector<std::uint8_t> hit(img.width * img.height, 0);
  for (std::size_t z = 0; z < s[2]; ++z)
    for (std::size_t y = 0; y < s[1]; ++y)
      for (std::size_t x = 0; x < s[0]; ++x) {
        const std::size_t c[3] = {x, y, z};
        // Flip vertically so that the larger coordinate is at the top.
        const std::size_t p = c[u] + img.width * (img.height - 1 - c[v]);
        mip[p] = std::max(mip[p], vol.grid(x, y, z));
        if (mask && mask->grid(x, y, z)) hit[p] = 1;
      }
  const auto [lo_it, hi_it] = std::minmax_element(mip.begin(), mip.end());
  const double lo = *lo_it, range = std::max(1e-12, static_cast<double>(*hi_it) - lo);
  img.rgb.resize(3 * mip.size());
  for (std::size_t p = 0; p < mip.size(); ++p) {
    const double g = 255.0 * (mip[p] - lo) / range;
    double r = g, gg = g, b = g;
    if (hit[p]) {
      r = (1.0 - alpha) * g + alpha * 255.0;
      gg = (1.0 - alpha) * g;
      b = (1.0 - alpha) * g;
    }
    img.rgb[3 * p] = static_cast<std::uint8_t>(std::clamp(r + 0.5, 0.0, 255.0));
    img.rgb[3 * p + 1] = static_cast<std::uint8_t>(std::clamp(gg + 0.5, 0.0, 255.0));
    img.rgb[3 * p + 2] = static_cast<std::uint8_t>(std::clamp(b + 0.5, 0.0, 255.0));
  }
  return img;
}

void write_png(const RgbImage& img, const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t row = 0; row < img.height; ++row)
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() + 3 * img.width * row));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::filesystem::path> render_mips(const Volume& vol, const LabelVolume* mask,
                                               const std::filesystem::path& prefix) {
  std::string base = prefix.string();
  if (base.size() > 4 && base.substr(base.size() - 4) == ".png") base.resize(base.size() - 4);
  std::vector<std::filesystem::path> out;
  const char* names[3] = {"x", "y", "z"};
  for (int a = 0; a < 3; ++a) {
    std::filesystem::path p = base + "_mip_" + names[a] + ".png";
    write_png(render_mip(vol, a, mask), p);
    out.push_back(p);
  }
  return out;
}

}  // namespace jobvs
