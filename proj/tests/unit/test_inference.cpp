#include <doctest.h>

#include <random>

#include "jobvs/inference.hpp"

using namespace jobvs;

namespace {

PatchPredictor constant(float p) {
  return [p](const Tensor& x) {
    ProbabilityPair out;
    Tensor t(2, x.spatial());
    for (std::size_t i = 0; i < x.voxels(); ++i) {
      t[i] = 1 - p;
      t[x.voxels() + i] = p;
    }
    out.vessel = t;
    out.brain = t;
    return out;
  };
}

// Foreground probability equals the input intensity: blending any number of
// overlapping tiles must return the input.
ProbabilityPair echo(const Tensor& x) {
  ProbabilityPair out;
  Tensor t(2, x.spatial());
  for (std::size_t i = 0; i < x.voxels(); ++i) {
    t[i] = 1 - x[i];
    t[x.voxels() + i] = x[i];
  }
  out.vessel = t;
  return out;
}

Volume random_volume(Shape3 s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Volume v;
  v.grid = Grid3<float>(s);
  for (float& x : v.grid.values()) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("tile starts") {
  CHECK(tile_starts(96, 64, 0.5) == std::vector<std::size_t>{0, 32});
  CHECK(tile_starts(64, 64, 0.5) == std::vector<std::size_t>{0});
  CHECK(tile_starts(100, 64, 0.5) == std::vector<std::size_t>{0, 32, 36});
  CHECK(tile_starts(5, 2, 0.99) == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(tile_starts(10, 4, 0.0) == std::vector<std::size_t>{0, 4, 6});
}

TEST_CASE("gaussian weights are positive with unit peak") {
  const auto w = gaussian_weights({8, 6, 4});
  double mx = 0;
  for (double v : w.values()) {
    CHECK(v > 0.0);
    mx = std::max(mx, v);
  }
  CHECK(mx <= 1.0);
  CHECK(mx > 0.8);
}

TEST_CASE("constant predictor gives a constant volume") {
  const Volume v = random_volume({20, 17, 9}, 1);
  for (double overlap : {0.0, 0.25, 0.5, 0.75}) {
    const auto out = sliding_window_predict(constant(0.3f), v, {8, 8, 8}, overlap);
    REQUIRE(out.vessel_prob);
    CHECK(out.vessel_prob->shape() == v.shape());
    for (float x : out.vessel_prob->grid.values()) CHECK(x == doctest::Approx(0.3f).epsilon(1e-6));
  }
}

TEST_CASE("tile blending reproduces a pointwise predictor") {
  const Volume v = random_volume({21, 13, 10}, 2);
  const auto out = sliding_window_predict(echo, v, {8, 8, 8}, 0.5);
  REQUIRE(out.vessel_prob);
  CHECK(!out.brain_prob);
  for (std::size_t i = 0; i < v.grid.size(); ++i)
    CHECK(out.vessel_prob->grid[i] == doctest::Approx(v.grid[i]).epsilon(1e-5));

  // smaller than the patch: padded then cropped back
  const Volume small = random_volume({5, 8, 3}, 3);
  const auto s = sliding_window_predict(echo, small, {8, 8, 8}, 0.5);
  CHECK(s.vessel_prob->shape() == small.shape());
  for (std::size_t i = 0; i < small.grid.size(); ++i)
    CHECK(s.vessel_prob->grid[i] == doctest::Approx(small.grid[i]).epsilon(1e-5));
}

TEST_CASE("binarize tie rule") {
  Volume v;
  v.grid = Grid3<float>({2, 2, 2}, 0.4f);
  const LabelVolume low = binarize(v);
  for (auto x : low.grid.values()) CHECK(x == 0);
  v.grid = Grid3<float>({2, 2, 2}, 0.5f);
  const LabelVolume tie = binarize(v);
  for (auto x : tie.grid.values()) CHECK(x == 1);
}

TEST_CASE("brain mask application") {
  PredictionVolume p;
  p.vessel_prob = random_volume({4, 4, 4}, 4);
  p.brain_prob = random_volume({4, 4, 4}, 5);
  LabelVolume ones, zeros, half;
  ones.grid = Grid3<std::uint8_t>({4, 4, 4}, 1);
  zeros.grid = Grid3<std::uint8_t>({4, 4, 4}, 0);
  half.grid = Grid3<std::uint8_t>({4, 4, 4}, 0);
  for (std::size_t i = 0; i < 64; i += 2) half.grid[i] = 1;

  CHECK(apply_brain_mask(p, ones).vessel_prob->grid == p.vessel_prob->grid);
  const auto none = apply_brain_mask(p, zeros);
  for (float x : none.vessel_prob->grid.values()) CHECK(x == 0.0f);
  const auto m = apply_brain_mask(p, half);
  CHECK(m.brain_prob->grid == p.brain_prob->grid);
  for (std::size_t i = 0; i < 64; ++i) CHECK(m.vessel_prob->grid[i] <= p.vessel_prob->grid[i]);
}

TEST_CASE("evaluation modes from a prediction") {
  SubjectRecord rec;
  rec.image = random_volume({6, 6, 6}, 6);
  rec.brain.grid = Grid3<std::uint8_t>({6, 6, 6}, 0);
  rec.vessel.grid = Grid3<std::uint8_t>({6, 6, 6}, 0);
  for (std::size_t i = 0; i < 108; ++i) rec.brain.grid[i] = 1;

  PredictionVolume nbm;
  nbm.vessel_prob = random_volume({6, 6, 6}, 7);
  nbm.brain_prob = random_volume({6, 6, 6}, 8);
  const auto joint = evaluate_modes(nbm, rec);
  CHECK(joint.mask_predicted);
  CHECK(joint.mask.grid == binarize(*nbm.brain_prob).grid);
  CHECK(joint.nbm.vessel_prob->grid == nbm.vessel_prob->grid);
  CHECK(joint.bm.vessel_prob->grid == apply_brain_mask(nbm, binarize(*nbm.brain_prob)).vessel_prob->grid);

  nbm.brain_prob.reset();
  const auto single = evaluate_modes(nbm, rec);
  CHECK(!single.mask_predicted);
  CHECK(single.mask.grid == rec.brain.grid);
  CHECK(single.nbm.vessel_prob->grid == nbm.vessel_prob->grid);

  CHECK(eval_mode_from_string("bm") == EvalMode::bm);
  CHECK(to_string(EvalMode::nbm) == "NBM");
  CHECK_THROWS_AS(eval_mode_from_string("both"), UsageError);
}

TEST_CASE("model sliding window") {
  LatticeConfig c;
  c.n_levels = 2;
  c.lattice_length = 1;
  c.base_channels = 2;
  c.patch_size = {8, 8, 8};
  const auto m = build_model(c, 1);
  const Volume v = random_volume({12, 10, 8}, 9);
  const auto out = sliding_window_predict(m, v, 0.5);
  REQUIRE(out.vessel_prob);
  REQUIRE(out.brain_prob);
  for (float x : out.vessel_prob->grid.values()) {
    CHECK(x >= 0.0f);
    CHECK(x <= 1.0f);
  }
}
