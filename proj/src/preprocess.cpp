#include "jobvs/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace jobvs {
namespace {

struct Moments {
  double mean = 0.0;
  double std = 0.0;
};

Moments moments(std::span<const float> values) {
  double sum = 0.0;
  for (float v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (float v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size()))};
}

Vec3 resampled_origin(const Vec3& origin, const Vec3& spacing, const Vec3& target) {
  Vec3 out;
  for (int a = 0; a < 3; ++a) out[a] = origin[a] - 0.5 * spacing[a] + 0.5 * target[a];
  return out;
}

void check_target(const Vec3& target) {
  for (double t : target)
    if (!(t > 0.0) || !std::isfinite(t)) throw DataError("resampling target spacing must be positive");
}

// Source coordinate of output voxel i when mapping n_out voxels onto n_in.
double source_coord(std::size_t i, double scale) { return (static_cast<double>(i) + 0.5) * scale - 0.5; }

Volume trilinear(const Volume& vol, const Shape3& out_shape, const Vec3& scale) {
  const Shape3& in = vol.shape();
  // Separable per-axis lookup tables.
  std::array<std::vector<std::size_t>, 3> lo, hi;
  std::array<std::vector<double>, 3> frac;
  for (int a = 0; a < 3; ++a) {
    lo[a].resize(out_shape[a]);
    hi[a].resize(out_shape[a]);
    frac[a].resize(out_shape[a]);
    for (std::size_t i = 0; i < out_shape[a]; ++i) {
      double c = std::clamp(source_coord(i, scale[a]), 0.0, static_cast<double>(in[a] - 1));
      const auto f = static_cast<std::size_t>(std::floor(c));
      lo[a][i] = f;
      hi[a][i] = std::min(f + 1, in[a] - 1);
      frac[a][i] = c - static_cast<double>(f);
    }
  }
  Volume out;
  out.grid = Grid3<float>(out_shape);
  const auto& g = vol.grid;
  for (std::size_t z = 0; z < out_shape[2]; ++z) {
    const double fz = frac[2][z];
    for (std::size_t y = 0; y < out_shape[1]; ++y) {
      const double fy = frac[1][y];
      for (std::size_t x = 0; x < out_shape[0]; ++x) {
        const double fx = frac[0][x];
        auto at = [&](std::size_t xi, std::size_t yi, std::size_t zi) -> double { return g(xi, yi, zi); };
        const std::size_t x0 = lo[0][x], x1 = hi[0][x], y0 = lo[1][y], y1 = hi[1][y], z0 = lo[2][z], z1 = hi[2][z];
        const double c00 = at(x0, y0, z0) * (1 - fx) + at(x1, y0, z0) * fx;
        const double c10 = at(x0, y1, z0) * (1 - fx) + at(x1, y1, z0) * fx;
        const double c01 = at(x0, y0, z1) * (1 - fx) + at(x1, y0, z1) * fx;
        const double c11 = at(x0, y1, z1) * (1 - fx) + at(x1, y1, z1) * fx;
        const double c0 = c00 * (1 - fy) + c10 * fy;
        const double c1 = c01 * (1 - fy) + c11 * fy;
        out.grid(x, y, z) = static_cast<float>(c0 * (1 - fz) + c1 * fz);
      }
    }
  }
  return out;
}

}  // namespace

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto below = static_cast<std::size_t>(std::floor(rank));
  const std::size_t above = std::min(below + 1, values.size() - 1);
  const double w = rank - static_cast<double>(below);
  return values[below] * (1.0 - w) + values[above] * w;
}

double median(std::vector<double> values) { return percentile(std::move(values), 50.0); }

Volume zscore(const Volume& vol) {
  const Moments m = moments(vol.grid.values());
  if (!(m.std > 0.0)) throw DataError("constant image cannot be z-score normalised");
  Volume out = vol;
  for (float& v : out.grid.values()) v = static_cast<float>((v - m.mean) / m.std);
  return out;
}

Volume clip(const Volume& vol, double lo, double hi) {
  Volume out = vol;
  const auto flo = static_cast<float>(lo), fhi = static_cast<float>(hi);
  for (float& v : out.grid.values()) v = std::clamp(v, flo, fhi);
  return out;
}

CohortStats compute_cohort_stats(std::span<const SubjectRecord> train_set) {
  if (train_set.empty()) throw DataError("cannot compute statistics of an empty cohort");
  CohortStats stats;
  for (int a = 0; a < 3; ++a) {
    std::vector<double> sp;
    for (const auto& r : train_set) sp.push_back(r.image.spacing[a]);
    stats.median_spacing[a] = median(std::move(sp));
  }

  std::vector<Volume> normalized;
  normalized.reserve(train_set.size());
  std::vector<double> vessel_values;
  for (const auto& r : train_set) {
    if (!same_geometry(r.image, r.vessel)) throw DataError("vessel mask shape mismatch for " + r.id);
    normalized.push_back(zscore(r.image));
    const auto& img = normalized.back().grid;
    for (std::size_t i = 0; i < img.size(); ++i)
      if (r.vessel.grid[i]) vessel_values.push_back(img[i]);
  }
  if (vessel_values.empty()) throw DataError("training cohort contains no vessel voxels");
  stats.vessel_clip_lo = percentile(vessel_values, 0.5);
  stats.vessel_clip_hi = percentile(std::move(vessel_values), 99.5);
  if (!(stats.vessel_clip_lo < stats.vessel_clip_hi))
    throw NumericalError("degenerate vessel intensity range in training cohort");

  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : normalized) {
    for (float x : v.grid.values()) sum += std::clamp<double>(x, stats.vessel_clip_lo, stats.vessel_clip_hi);
    n += v.grid.size();
  }
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& v : normalized) {
    for (float x : v.grid.values()) {
      const double c = std::clamp<double>(x, stats.vessel_clip_lo, stats.vessel_clip_hi) - mean;
      ss += c * c;
    }
  }
  stats.global_mean = mean;
  stats.global_std = std::sqrt(ss / static_cast<double>(n));
  if (!(stats.global_std > 0.0)) throw NumericalError("zero global standard deviation");
  return stats;
}

Shape3 resampled_shape(const Shape3& shape, const Vec3& spacing, const Vec3& target) {
  check_target(target);
  Shape3 out;
  for (int a = 0; a < 3; ++a) {
    const double n = std::round(static_cast<double>(shape[a]) * spacing[a] / target[a]);
    out[a] = static_cast<std::size_t>(std::max(1.0, n));
  }
  return out;
}

Volume resample_to_spacing(const Volume& vol, const Vec3& target) {
  const Shape3 out_shape = resampled_shape(vol.shape(), vol.spacing, target);
  Vec3 scale;
  for (int a = 0; a < 3; ++a) scale[a] = target[a] / vol.spacing[a];
  Volume out = trilinear(vol, out_shape, scale);
  out.spacing = target;
  out.origin = resampled_origin(vol.origin, vol.spacing, target);
  return out;
}

LabelVolume resample_to_spacing(const LabelVolume& vol, const Vec3& target) {
  const Shape3 out_shape = resampled_shape(vol.shape(), vol.spacing, target);
  const Shape3& in = vol.shape();
  std::array<std::vector<std::size_t>, 3> idx;
  for (int a = 0; a < 3; ++a) {
    const double scale = target[a] / vol.spacing[a];
    idx[a].resize(out_shape[a]);
    for (std::size_t i = 0; i < out_shape[a]; ++i) {
      const double c = (static_cast<double>(i) + 0.5) * scale;
      idx[a][i] = std::min(static_cast<std::size_t>(std::floor(c)), in[a] - 1);
    }
  }
  LabelVolume out;
  out.grid = Grid3<std::uint8_t>(out_shape);
  for (std::size_t z = 0; z < out_shape[2]; ++z)
    for (std::size_t y = 0; y < out_shape[1]; ++y)
      for (std::size_t x = 0; x < out_shape[0]; ++x) out.grid(x, y, z) = vol.grid(idx[0][x], idx[1][y], idx[2][z]);
  out.spacing = target;
  out.origin = resampled_origin(vol.origin, vol.spacing, target);
  return out;
}

Volume resample_to_shape(const Volume& vol, const Shape3& shape) {
  Vec3 scale, spacing;
  for (int a = 0; a < 3; ++a) {
    if (shape[a] < 1) throw DataError("resampling to an empty shape");
    scale[a] = static_cast<double>(vol.shape()[a]) / static_cast<double>(shape[a]);
    spacing[a] = vol.spacing[a] * scale[a];
  }
  Volume out = trilinear(vol, shape, scale);
  out.spacing = spacing;
  out.origin = resampled_origin(vol.origin, vol.spacing, spacing);
  return out;
}

Volume normalize(const Volume& vol, const CohortStats& stats) {
  Volume out = clip(zscore(vol), stats.vessel_clip_lo, stats.vessel_clip_hi);
  for (float& v : out.grid.values()) v = static_cast<float>((v - stats.global_mean) / stats.global_std);
  return out;
}

SubjectRecord preprocess_record(const SubjectRecord& rec, const CohortStats& stats) {
  SubjectRecord out;
  out.id = rec.id;
  const bool same = rec.image.spacing == stats.median_spacing;
  out.image = normalize(same ? rec.image : resample_to_spacing(rec.image, stats.median_spacing), stats);
  out.brain = same ? rec.brain : resample_to_spacing(rec.brain, stats.median_spacing);
  out.vessel = same ? rec.vessel : resample_to_spacing(rec.vessel, stats.median_spacing);
  return out;
}

}  // namespace jobvs
