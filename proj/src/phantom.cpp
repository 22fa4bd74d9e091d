#include "jobvs/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace jobvs {
namespace {

struct Capsule {
  Vec3 a, b;
  double radius;
};

Vec3 operator+(const Vec3& u, const Vec3& v) { return {u[0] + v[0], u[1] + v[1], u[2] + v[2]}; }
Vec3 operator-(const Vec3& u, const Vec3& v) { return {u[0] - v[0], u[1] - v[1], u[2] - v[2]}; }
Vec3 operator*(const Vec3& u, double s) { return {u[0] * s, u[1] * s, u[2] * s}; }
double dot(const Vec3& u, const Vec3& v) { return u[0] * v[0] + u[1] * v[1] + u[2] * v[2]; }
Vec3 normalized(const Vec3& u) { return u * (1.0 / std::sqrt(dot(u, u))); }

using Rng = std::mt19937_64;

Rng subject_stream(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
  return Rng(seq);
}

Vec3 random_unit(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    v = {n(rng), n(rng), n(rng)};
  } while (dot(v, v) < 1e-12);
  return normalized(v);
}

Vec3 random_perpendicular(const Vec3& dir, Rng& rng) {
  Vec3 v = random_unit(rng);
  v = v - dir * dot(v, dir);
  if (dot(v, v) < 1e-8) v = std::abs(dir[0]) < 0.9 ? Vec3{1, 0, 0} - dir * dir[0] : Vec3{0, 1, 0} - dir * dir[1];
  return normalized(v);
}

struct Geometry {
  Vec3 center;
  Vec3 axes;  // voxels
  std::vector<Capsule> tubes;

  double rho(const Vec3& p) const {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) s += std::pow((p[a] - center[a]) / axes[a], 2);
    return std::sqrt(s);
  }
  bool in_brain(const Vec3& p) const { return rho(p) <= 1.0; }
  // First-order distance (voxels) to the ellipsoid surface, valid outside.
  double outside_distance(const Vec3& p) const {
    const double r = rho(p);
    double g = 0.0;
    for (int a = 0; a < 3; ++a) g += std::pow((p[a] - center[a]) / (axes[a] * axes[a]), 2);
    g = std::sqrt(g) / r;
    return (r - 1.0) / g;
  }
};

void grow_branch(const PhantomConfig& cfg, Vec3 start, Vec3 dir, double length, double radius, int depth,
                 Rng& rng, std::vector<Capsule>& out) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0);
  const Vec3 end = start + dir * length;

  // Two rounds of midpoint displacement give a gently tortuous polyline.
  std::vector<Vec3> pts{start, end};
  for (int round = 0; round < 2; ++round) {
    std::vector<Vec3> refined{pts.front()};
    for (std::size_t i = 1; i < pts.size(); ++i) {
      const Vec3 seg = pts[i] - pts[i - 1];
      const double seg_len = std::sqrt(dot(seg, seg));
      const Vec3 mid = (pts[i - 1] + pts[i]) * 0.5;
      const Vec3 off = random_perpendicular(normalized(seg), rng) * (0.12 * seg_len * jitter(rng));
      refined.push_back(mid + off);
      refined.push_back(pts[i]);
    }
    pts = std::move(refined);
  }
  for (std::size_t i = 1; i < pts.size(); ++i) out.push_back({pts[i - 1], pts[i], radius});

  if (depth <= 1) return;
  const Vec3 axis = random_perpendicular(dir, rng);
  for (int child = 0; child < 2; ++child) {
    const double angle = (25.0 + 20.0 * u01(rng)) * std::numbers::pi / 180.0;
    const Vec3 side = child == 0 ? axis : axis * -1.0;
    const Vec3 child_dir = normalized(dir * std::cos(angle) + side * std::sin(angle));
    grow_branch(cfg, end, child_dir, length * 0.75, std::max(radius * 0.7, cfg.vessel_radius_min), depth - 1, rng,
                out);
  }
}

Geometry make_geometry(const PhantomConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double n = static_cast<double>(cfg.size);
  Geometry g;
  const double scale = 0.94 + 0.08 * u01(rng);
  for (int a = 0; a < 3; ++a) {
    g.center[a] = 0.5 * n - 0.5 + (u01(rng) - 0.5) * 3.0;
    g.axes[a] = cfg.brain_axes[a] * n * scale;
  }
  const double mean_axis = (g.axes[0] + g.axes[1] + g.axes[2]) / 3.0;
  for (int root = 0; root < cfg.n_vessel_roots; ++root) {
    Vec3 p;
    do {
      for (int a = 0; a < 3; ++a) p[a] = g.center[a] + (2.0 * u01(rng) - 1.0) * 0.5 * g.axes[a];
    } while (g.rho(p) > 0.5);
    const Vec3 dir = random_unit(rng);
    const double radius = cfg.vessel_radius_max * (0.85 + 0.15 * u01(rng));
    grow_branch(cfg, p, dir, 0.45 * mean_axis, radius, cfg.branch_depth, rng, g.tubes);
  }
  return g;
}

double segment_distance(const Vec3& p, const Capsule& c) {
  const Vec3 ab = c.b - c.a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(p - c.a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec3 d = p - (c.a + ab * t);
  return std::sqrt(dot(d, d));
}

// Fractional tube coverage per voxel (linear ramp over one voxel at the wall).
Grid3<float> tube_coverage(const Geometry& g, std::size_t size) {
  Grid3<float> cov({size, size, size}, 0.0f);
  const auto hi = static_cast<long>(size) - 1;
  for (const Capsule& c : g.tubes) {
    const double reach = c.radius + 0.5;
    long lo_i[3], hi_i[3];
    for (int a = 0; a < 3; ++a) {
      lo_i[a] = std::max(0L, static_cast<long>(std::floor(std::min(c.a[a], c.b[a]) - reach)));
      hi_i[a] = std::min(hi, static_cast<long>(std::ceil(std::max(c.a[a], c.b[a]) + reach)));
    }
    for (long z = lo_i[2]; z <= hi_i[2]; ++z)
      for (long y = lo_i[1]; y <= hi_i[1]; ++y)
        for (long x = lo_i[0]; x <= hi_i[0]; ++x) {
          const Vec3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
          const double value = std::clamp(reach - segment_distance(p, c), 0.0, 1.0);
          float& dst = cov(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z));
          dst = std::max(dst, static_cast<float>(value));
        }
  }
  return cov;
}

double skull_coverage(const PhantomConfig& cfg, const Geometry& g, const Vec3& p) {
  if (g.in_brain(p)) return 0.0;
  const double d = g.outside_distance(p);
  const double inner = cfg.skull_gap, outer = cfg.skull_gap + cfg.skull_thickness;
  return std::clamp(std::min(d - inner, outer - d) + 0.5, 0.0, 1.0);
}

}  // namespace

void validate(const PhantomConfig& cfg) {
  if (cfg.size < 32) throw UsageError("phantom size must be >= 32");
  if (!(cfg.spacing > 0.0)) throw UsageError("phantom spacing must be positive");
  if (cfg.vessel_radius_min < 1.0 || cfg.vessel_radius_max < cfg.vessel_radius_min)
    throw UsageError("vessel radii must be >= 1 voxel and min <= max");
  if (std::abs(cfg.skull - cfg.vessel) > 0.1 * cfg.vessel)
    throw UsageError("skull intensity must lie within 10% of vessel intensity");
  if (cfg.n_vessel_roots < 1 || cfg.branch_depth < 1) throw UsageError("need at least one vessel root and level");
  if (cfg.skull_thickness <= 0.0 || cfg.skull_gap < 0.0) throw UsageError("invalid skull geometry");
  if (cfg.noise_std < 0.0) throw UsageError("noise_std must be non-negative");
  for (double a : cfg.brain_axes)
    if (!(a > 0.0) || a >= 0.5) throw UsageError("brain semi-axes must lie in (0, 0.5)");
}

std::string phantom_id(std::size_t subject_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "phantom_%03zu", subject_index);
  return buf;
}

SubjectRecord generate_phantom(const PhantomConfig& cfg, std::size_t subject_index) {
  validate(cfg);
  Rng rng = subject_stream(cfg.seed, subject_index);
  const Geometry g = make_geometry(cfg, rng);
  const std::size_t n = cfg.size;
  const Shape3 shape{n, n, n};
  const Grid3<float> tubes = tube_coverage(g, n);

  SubjectRecord rec;
  rec.id = phantom_id(subject_index);
  rec.image.grid = Grid3<float>(shape);
  rec.brain.grid = Grid3<std::uint8_t>(shape);
  rec.vessel.grid = Grid3<std::uint8_t>(shape);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t z = 0; z < n; ++z)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const Vec3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        double value;
        if (g.in_brain(p)) {
          const double v = tubes(x, y, z);
          value = cfg.brain + (cfg.vessel - cfg.brain) * v;
          rec.brain.grid(x, y, z) = 1;
          rec.vessel.grid(x, y, z) = v > 0.0 ? 1 : 0;
        } else {
          value = cfg.background + (cfg.skull - cfg.background) * skull_coverage(cfg, g, p);
        }
        if (cfg.noise_std > 0.0) value += cfg.noise_std * noise(rng);
        rec.image.grid(x, y, z) = static_cast<float>(value);
      }
  const Vec3 spacing{cfg.spacing, cfg.spacing, cfg.spacing};
  rec.image.spacing = rec.brain.spacing = rec.vessel.spacing = spacing;
  return rec;
}

std::vector<SubjectRecord> generate_cohort(const PhantomConfig& cfg, std::size_t n) {
  if (n < 1) throw UsageError("cohort size must be >= 1");
  std::vector<SubjectRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_phantom(cfg, i));
  return out;
}

LabelVolume skull_mask(const PhantomConfig& cfg, std::size_t subject_index) {
  validate(cfg);
  Rng rng = subject_stream(cfg.seed, subject_index);
  const Geometry g = make_geometry(cfg, rng);
  const std::size_t n = cfg.size;
  LabelVolume out;
  out.grid = Grid3<std::uint8_t>({n, n, n});
  out.spacing = {cfg.spacing, cfg.spacing, cfg.spacing};
  for (std::size_t z = 0; z < n; ++z)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const Vec3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        out.grid(x, y, z) = skull_coverage(cfg, g, p) > 0.0 ? 1 : 0;
      }
  return out;
}

}  // namespace jobvs
