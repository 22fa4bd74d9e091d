#include <doctest.h>

#include <random>

#include "jobvs/adversarial.hpp"

using namespace jobvs;

namespace {

LatticeConfig tiny() {
  LatticeConfig c;
  c.n_levels = 3;
  c.base_channels = 2;
  c.patch_size = {8, 8, 8};
  return c;
}

// Deterministic synthetic mini-batches: a bright bar is the "vessel".
Batch make_batch(std::size_t step, std::size_t size) {
  Batch b;
  std::mt19937_64 rng(100 + step);
  std::normal_distribution<float> n(0.0f, 0.3f);
  for (std::size_t k = 0; k < size; ++k) {
    PatchTriple p{Tensor(1, {8, 8, 8}), Grid3<std::uint8_t>({8, 8, 8}), Grid3<std::uint8_t>({8, 8, 8})};
    const std::size_t row = rng() % 8;
    for (std::size_t z = 0; z < 8; ++z)
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
          const bool brain = x > 1 && x < 7;
          const bool vessel = brain && y == row;
          p.brain(x, y, z) = brain;
          p.vessel(x, y, z) = vessel;
          p.image.at(0, x, y, z) = (vessel ? 2.0f : brain ? 0.0f : -1.0f) + n(rng);
        }
    b.push_back(std::move(p));
  }
  return b;
}

}  // namespace

TEST_CASE("project_linf clamps and is idempotent") {
  const double eps = 8.0 / 255.0;
  const Tensor d(1, {2, 2, 2}, 0.1f);
  const Tensor p = project_linf(d, eps);
  for (float v : p.values()) {
    CHECK(v <= eps);
    CHECK(v == doctest::Approx(0.03137).epsilon(1e-4));
  }
  CHECK(project_linf(p, eps) == p);

  Tensor in(1, {3, 1, 1});
  in[0] = 0.01f;
  in[1] = -0.02f;
  in[2] = -0.5f;
  const Tensor q = project_linf(in, eps);
  CHECK(q[0] == 0.01f);
  CHECK(q[1] == -0.02f);
  CHECK(q[2] == -p[0]);
}

TEST_CASE("AT config validation") {
  ATConfig a;
  a.n_replays = 0;
  CHECK_THROWS_AS(validate(a), UsageError);
  a = {};
  a.epsilon = -1;
  CHECK_THROWS_AS(validate(a), UsageError);
  CHECK(ATConfig{}.epsilon == 8.0 / 255.0);
  CHECK(ATConfig{}.n_replays == 5);
}

TEST_CASE("free AT pass counts and perturbation bound") {
  auto model = build_model(tiny(), 1);
  ATConfig at;
  at.enabled = true;
  Adam opt({});
  std::vector<Tensor> delta;
  const std::size_t B = 3;
  const auto stats = free_at_epoch(model, [](std::size_t s) { return make_batch(s, 2); }, B, at, opt, 1e-3,
                                   LossWeights{}, delta);
  CHECK(stats.passes.forward == static_cast<long>(B * 2 * 5));
  CHECK(stats.passes.backward == static_cast<long>(B * 2 * 5));
  CHECK(stats.passes.weight_steps == static_cast<long>(B * 5));
  CHECK(stats.replay_losses.size() == B * 5);
  REQUIRE(stats.replay_max_delta.size() == B * 5);
  for (double m : stats.replay_max_delta) CHECK(m <= at.epsilon);
  CHECK(stats.replay_max_delta.back() > 0.0);
  REQUIRE(delta.size() == 2);
  for (const auto& d : delta)
    for (float v : d.values()) CHECK(std::abs(v) <= at.epsilon);

  at.enabled = false;
  CHECK_THROWS_AS(free_at_epoch(model, [](std::size_t s) { return make_batch(s, 1); }, 1, at, opt, 1e-3,
                                LossWeights{}, delta),
                  UsageError);
}

TEST_CASE("epsilon 0 equals plain replayed training") {
  ATConfig at;
  at.enabled = true;
  at.epsilon = 0.0;
  at.n_replays = 3;
  auto a = build_model(tiny(), 2);
  auto b = a;
  Adam oa({}), ob({});
  std::vector<Tensor> delta;
  const auto stats =
      free_at_epoch(a, [](std::size_t s) { return make_batch(s, 1); }, 2, at, oa, 1e-3, LossWeights{}, delta);
  PassCounters c;
  std::vector<double> losses;
  for (std::size_t s = 0; s < 2; ++s) {
    const Batch batch = make_batch(s, 1);
    for (int r = 0; r < 3; ++r) losses.push_back(gradient_step(b, ob, batch, 1e-3, LossWeights{}, c).loss.total);
  }
  CHECK(a.checksum() == b.checksum());
  CHECK(stats.replay_losses == losses);
  for (float v : delta[0].values()) CHECK(v == 0.0f);
}
