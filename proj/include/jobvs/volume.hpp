#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jobvs/error.hpp"

namespace jobvs {

using Shape3 = std::array<std::size_t, 3>;
using Vec3 = std::array<double, 3>;

inline std::size_t voxel_count(const Shape3& s) { return s[0] * s[1] * s[2]; }

/// Dense 3D grid, x fastest (NIfTI storage order).
template <class T>
class Grid3 {
 public:
  Grid3() = default;
  explicit Grid3(Shape3 shape, T fill = T{}) : shape_(shape), data_(voxel_count(shape), fill) {}
  Grid3(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != voxel_count(shape_)) throw DataError("grid payload size does not match shape");
  }

  const Shape3& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t nx() const { return shape_[0]; }
  std::size_t ny() const { return shape_[1]; }
  std::size_t nz() const { return shape_[2]; }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + shape_[0] * (y + shape_[1] * z);
  }
  T& operator()(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
  const T& operator()(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool operator==(const Grid3&) const = default;

 private:
  Shape3 shape_{0, 0, 0};
  std::vector<T> data_;
};

/// A grid with physical geometry (spacing and origin in mm).
template <class T>
struct Image {
  Grid3<T> grid;
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  const Shape3& shape() const { return grid.shape(); }
};

/// Intensity volume.
using Volume = Image<float>;
/// Binary mask with values in {0,1}.
using LabelVolume = Image<std::uint8_t>;

struct SubjectRecord {
  std::string id;
  Volume image;
  LabelVolume brain;
  LabelVolume vessel;
};

struct CohortStats {
  Vec3 median_spacing{};
  double vessel_clip_lo = 0.0;
  double vessel_clip_hi = 0.0;
  double global_mean = 0.0;
  double global_std = 1.0;
};

/// Throws DataError unless spacing > 0, every axis >= 1 and (for float
/// grids) all values are finite.
template <class T>
void validate(const Image<T>& img) {
  for (int a = 0; a < 3; ++a) {
    if (img.grid.shape()[a] < 1) throw DataError("volume has an empty axis");
    if (!(img.spacing[a] > 0.0) || !std::isfinite(img.spacing[a]))
      throw DataError("volume spacing must be positive on every axis");
  }
  if constexpr (std::is_floating_point_v<T>) {
    for (T v : img.grid.values())
      if (!std::isfinite(v)) throw DataError("volume contains non-finite values");
  } else {
    for (T v : img.grid.values())
      if (v > 1) throw DataError("label volume is not binary");
  }
}

template <class A, class B>
bool same_geometry(const Image<A>& a, const Image<B>& b) {
  return a.shape() == b.shape();
}

}  // namespace jobvs
