#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <zlib.h>

#include "jobvs/phantom.hpp"
#include "jobvs/preprocess.hpp"
#include "jobvs/volume_io.hpp"

using namespace jobvs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "jobvs_unit";
  fs::create_directories(dir);
  return dir / name;
}

Volume random_volume(Shape3 s, Vec3 spacing, std::mt19937_64& rng) {
  Volume v;
  v.grid = Grid3<float>(s);
  v.spacing = spacing;
  v.origin = {1.5, -2.0, 0.25};
  std::normal_distribution<float> n(3.0f, 2.0f);
  for (float& x : v.grid.values()) x = n(rng);
  return v;
}

double mean_of(std::span<const float> v) {
  double s = 0;
  for (float x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(std::span<const float> v) {
  const double m = mean_of(v);
  double s = 0;
  for (float x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

// Minimal hand-built NIfTI-1 header for format edge cases.
void write_nifti(const fs::path& p, std::vector<short> dims, float spacing, short datatype, short bitpix,
                 const std::vector<char>& payload) {
  std::vector<char> buf(352, 0);
  auto put = [&](std::size_t off, const void* src, std::size_t n) { std::memcpy(buf.data() + off, src, n); };
  const int sizeof_hdr = 348;
  put(0, &sizeof_hdr, 4);
  short dim[8] = {0, 1, 1, 1, 1, 1, 1, 1};
  dim[0] = static_cast<short>(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i) dim[i + 1] = dims[i];
  put(40, dim, 16);
  put(70, &datatype, 2);
  put(72, &bitpix, 2);
  float pixdim[8] = {1, spacing, spacing, spacing, 1, 1, 1, 1};
  put(76, pixdim, 32);
  const float vox_offset = 352;
  put(108, &vox_offset, 4);
  put(344, "n+1\0", 4);
  buf.insert(buf.end(), payload.begin(), payload.end());
  gzFile f = gzopen(p.c_str(), "wb");
  gzwrite(f, buf.data(), static_cast<unsigned>(buf.size()));
  gzclose(f);
}

}  // namespace

TEST_CASE("nifti round trip is bit exact") {
  std::mt19937_64 rng(1);
  const Volume v = random_volume({8, 8, 8}, {0.3, 0.3, 0.6}, rng);
  const auto p = scratch("rt.nii.gz");
  save_volume(v, p);
  const Volume r = load_volume(p);
  CHECK(r.grid == v.grid);
  for (int a = 0; a < 3; ++a) {
    CHECK(std::abs(r.spacing[a] - v.spacing[a]) <= 1e-6);
    CHECK(std::abs(r.origin[a] - v.origin[a]) <= 1e-5);
  }
}

TEST_CASE("label and raw round trips") {
  LabelVolume l;
  l.grid = Grid3<std::uint8_t>({5, 4, 3});
  for (std::size_t i = 0; i < l.grid.size(); ++i) l.grid[i] = (i * 7) % 3 == 0;
  l.spacing = {0.5, 0.25, 1.0};
  save_volume(l, scratch("lab.nii.gz"));
  const LabelVolume lr = load_label_volume(scratch("lab.nii.gz"));
  CHECK(lr.grid == l.grid);

  std::mt19937_64 rng(2);
  const Volume v = random_volume({6, 5, 4}, {0.3, 0.3, 0.6}, rng);
  save_volume(v, scratch("vol.raw"));
  CHECK(fs::exists(scratch("vol.json")));
  const Volume r = load_volume(scratch("vol.raw"));
  CHECK(r.grid == v.grid);
  CHECK(r.spacing == v.spacing);
}

TEST_CASE("phantom file round trip keeps shape and spacing") {
  const SubjectRecord rec = generate_phantom(PhantomConfig{}, 0);
  save_volume(rec.image, scratch("phantom_000.nii.gz"));
  const Volume r = load_volume(scratch("phantom_000.nii.gz"));
  CHECK(r.shape() == Shape3{64, 64, 64});
  CHECK(r.spacing == Vec3{0.5, 0.5, 0.5});
  CHECK(r.grid == rec.image.grid);
}

TEST_CASE("loader errors") {
  CHECK_THROWS_AS(load_volume(scratch("does_not_exist.nii.gz")), DataError);
  std::vector<char> payload(16 * sizeof(float), 0);
  write_nifti(scratch("flat.nii.gz"), {4, 4}, 1.0f, 16, 32, payload);
  CHECK_THROWS_AS(load_volume(scratch("flat.nii.gz")), DataError);
  std::vector<char> p3(8 * sizeof(float), 0);
  write_nifti(scratch("zero_spacing.nii.gz"), {2, 2, 2}, 0.0f, 16, 32, p3);
  CHECK_THROWS_AS(load_volume(scratch("zero_spacing.nii.gz")), DataError);
  write_nifti(scratch("ok.nii.gz"), {2, 2, 2}, 0.7f, 16, 32, p3);
  CHECK(load_volume(scratch("ok.nii.gz")).spacing[0] == doctest::Approx(0.7));

  std::vector<char> nonbinary(8, 0);
  nonbinary[3] = 2;
  write_nifti(scratch("nonbinary.nii.gz"), {2, 2, 2}, 1.0f, 2, 8, nonbinary);
  CHECK_THROWS_AS(load_label_volume(scratch("nonbinary.nii.gz")), DataError);

  std::mt19937_64 rng(3);
  CHECK_THROWS_AS(save_volume(random_volume({2, 2, 2}, {1, 1, 1}, rng), scratch("missing_dir") / "x.nii.gz"),
                  DataError);
}

TEST_CASE("percentile matches numpy's linear rule") {
  CHECK(percentile({1, 2, 3, 4}, 50) == doctest::Approx(2.5));
  CHECK(percentile({5}, 99.5) == 5);
  CHECK(percentile({0, 10}, 25) == doctest::Approx(2.5));
  CHECK(median({0.3, 0.4, 0.3}) == doctest::Approx(0.3));
}

TEST_CASE("cohort statistics") {
  auto make = [](Vec3 spacing, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    SubjectRecord r;
    r.image = random_volume({6, 6, 6}, spacing, rng);
    r.brain.grid = Grid3<std::uint8_t>({6, 6, 6}, 1);
    r.vessel.grid = Grid3<std::uint8_t>({6, 6, 6}, 0);
    r.vessel.grid[7] = 1;
    r.vessel.grid[100] = 1;
    return r;
  };
  std::vector<SubjectRecord> c{make({0.3, 0.3, 0.6}, 1), make({0.3, 0.3, 0.5}, 2), make({0.4, 0.4, 0.6}, 3)};
  const CohortStats s = compute_cohort_stats(c);
  CHECK(s.median_spacing == Vec3{0.3, 0.3, 0.6});
  CHECK(s.vessel_clip_lo < s.vessel_clip_hi);
  CHECK(s.global_std > 0);
  const CohortStats single = compute_cohort_stats(std::span(c).subspan(2, 1));
  CHECK(single.median_spacing == Vec3{0.4, 0.4, 0.6});

  CHECK_THROWS_AS(compute_cohort_stats({}), DataError);
  auto empty_vessel = c;
  for (auto& r : empty_vessel) r.vessel.grid.values()[7] = r.vessel.grid.values()[100] = 0;
  CHECK_THROWS_AS(compute_cohort_stats(empty_vessel), DataError);
}

TEST_CASE("vessel percentiles of a uniform pool") {
  // Pooled vessel intensities (after z-score) uniform on [0,1]: build one
  // image whose z-scored vessel voxels are exactly a uniform grid.
  const std::size_t n = 20000;
  SubjectRecord r;
  r.image.grid = Grid3<float>({n, 1, 2});
  r.vessel.grid = Grid3<std::uint8_t>({n, 1, 2}, 0);
  r.brain.grid = Grid3<std::uint8_t>({n, 1, 2}, 1);
  // first row: values, second row: mirror so that mean 0 and std 1 hold by construction
  std::vector<double> vals(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.image.grid(i, 0, 0) = static_cast<float>(vals[i]);
    r.image.grid(i, 0, 1) = static_cast<float>(-vals[i]);
    r.vessel.grid(i, 0, 0) = 1;
  }
  // z-score scale: std of +-U(0,1) is sqrt(1/3)
  const CohortStats s = compute_cohort_stats(std::vector<SubjectRecord>{r});
  const double scale = std::sqrt(1.0 / 3.0);
  CHECK(s.vessel_clip_lo * scale == doctest::Approx(0.005).epsilon(0.02));
  CHECK(s.vessel_clip_hi * scale == doctest::Approx(0.995).epsilon(0.002));
}

TEST_CASE("resampling shape rule, identity and constants") {
  CHECK(resampled_shape({10, 10, 10}, {0.6, 0.6, 0.6}, {0.3, 0.3, 0.3}) == Shape3{20, 20, 20});
  CHECK(resampled_shape({1, 3, 3}, {0.1, 1, 1}, {10, 1, 1}) == Shape3{1, 3, 3});
  std::mt19937_64 rng(4);
  const Volume v = random_volume({7, 5, 3}, {0.5, 0.6, 0.7}, rng);
  CHECK(resample_to_spacing(v, v.spacing).grid == v.grid);
  Volume c = v;
  for (float& x : c.grid.values()) x = 2.5f;
  const Volume cr = resample_to_spacing(c, {0.2, 0.9, 0.33});
  for (float x : cr.grid.values()) CHECK(x == doctest::Approx(2.5f));
  CHECK(cr.spacing == Vec3{0.2, 0.9, 0.33});
  CHECK_THROWS(resample_to_spacing(v, {0.0, 1, 1}));
}

TEST_CASE("label resampling stays binary and keeps physical extent") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> dim(1, 12);
  std::uniform_real_distribution<double> sp(0.2, 1.5);
  for (int t = 0; t < 100; ++t) {
    LabelVolume l;
    const Shape3 s{dim(rng), dim(rng), dim(rng)};
    l.grid = Grid3<std::uint8_t>(s);
    for (auto& x : l.grid.values()) x = rng() % 2;
    l.spacing = {sp(rng), sp(rng), sp(rng)};
    const Vec3 target{sp(rng), sp(rng), sp(rng)};
    const LabelVolume r = resample_to_spacing(l, target);
    for (auto x : r.grid.values()) CHECK(x <= 1);
    for (int a = 0; a < 3; ++a)
      CHECK(std::abs(r.shape()[a] * target[a] - s[a] * l.spacing[a]) <= std::max(target[a], l.spacing[a]) + 1e-12);
  }
}

TEST_CASE("normalize pipeline") {
  std::mt19937_64 rng(6);
  const Volume v = random_volume({9, 8, 7}, {1, 1, 1}, rng);
  const Volume z = zscore(v);
  CHECK(std::abs(mean_of(z.grid.values())) < 1e-6);
  CHECK(std::abs(std_of(z.grid.values()) - 1.0) < 1e-6);

  CohortStats st;
  st.median_spacing = {1, 1, 1};
  st.vessel_clip_lo = -1.0;
  st.vessel_clip_hi = 1.0;
  st.global_mean = 0.25;
  st.global_std = 2.0;
  const Volume n = normalize(v, st);
  for (std::size_t i = 0; i < v.grid.size(); ++i) {
    const double clipped = std::clamp(static_cast<double>(z.grid[i]), -1.0, 1.0);
    CHECK(n.grid[i] == doctest::Approx((clipped - 0.25) / 2.0).epsilon(1e-6));
  }
  const Volume c = clip(z, -1.0, 1.0);
  const auto it = std::max_element(z.grid.values().begin(), z.grid.values().end());
  CHECK(c.grid[static_cast<std::size_t>(it - z.grid.values().begin())] == 1.0f);
  CHECK(normalize(v, st).grid == n.grid);

  Volume constant = v;
  for (float& x : constant.grid.values()) x = 1.0f;
  CHECK_THROWS_AS(zscore(constant), DataError);
}
