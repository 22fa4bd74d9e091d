#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "jobvs/volume.hpp"

namespace jobvs {

/// Channel-major 4D array [channels, x, y, z]; each channel uses the Grid3
/// layout (x fastest). Batch size is always one.
template <class T>
class BasicTensor {
 public:
  BasicTensor() = default;
  BasicTensor(std::size_t channels, Shape3 spatial, T fill = T{})
      : channels_(channels), spatial_(spatial), data_(channels * voxel_count(spatial), fill) {}

  std::size_t channels() const { return channels_; }
  const Shape3& spatial() const { return spatial_; }
  std::size_t voxels() const { return voxel_count(spatial_); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::span<T> channel(std::size_t c) { return {data_.data() + c * voxels(), voxels()}; }
  std::span<const T> channel(std::size_t c) const { return {data_.data() + c * voxels(), voxels()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) {
    return data_[c * voxels() + x + spatial_[0] * (y + spatial_[1] * z)];
  }
  const T& at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) const {
    return data_[c * voxels() + x + spatial_[0] * (y + spatial_[1] * z)];
  }

  bool same_shape(const BasicTensor& o) const { return channels_ == o.channels_ && spatial_ == o.spatial_; }
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const BasicTensor&) const = default;

 private:
  std::size_t channels_ = 0;
  Shape3 spatial_{0, 0, 0};
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

}  // namespace jobvs
