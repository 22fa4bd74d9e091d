#include <doctest.h>

#include <random>

#include "jobvs/objective.hpp"

using namespace jobvs;
using Tensord = BasicTensor<double>;

namespace {

Tensord random_logits(const Shape3& s, std::mt19937_64& rng, double scale = 2.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensord t(2, s);
  for (double& v : t.values()) v = n(rng);
  return t;
}

std::vector<std::uint8_t> random_target(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::uint8_t> g(n);
  for (auto& v : g) v = rng() % 2;
  return g;
}

}  // namespace

TEST_CASE("dice loss examples") {
  const std::vector<std::uint8_t> g{1, 0, 1, 0};
  const std::vector<double> same{1, 0, 1, 0}, flipped{0, 1, 0, 1}, half{1, 1, 0, 0};
  CHECK(dice_loss<double>(same, g) <= 1e-5);
  CHECK(dice_loss<double>(flipped, g) >= 1 - 1e-4);
  CHECK(dice_loss<double>(half, g) == doctest::Approx(1 - (2 + kDiceSmooth) / (4 + kDiceSmooth)).epsilon(1e-12));
}

TEST_CASE("cross entropy examples") {
  Tensord z(2, {2, 2, 2}, 0.0);
  const std::vector<std::uint8_t> g{1, 0, 0, 1, 1, 1, 0, 0};
  CHECK(ce_loss(z, g) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  for (std::size_t i = 0; i < 8; ++i) z[g[i] ? 8 + i : i] = 20.0;
  CHECK(ce_loss(z, g) <= 1e-8);
}

TEST_CASE("task loss examples") {
  Tensord z(2, {2, 2, 2}, 0.0);
  const std::vector<std::uint8_t> zeros(8, 0);
  CHECK(task_loss(z, zeros) == doctest::Approx(std::log(2.0) + 1 - kDiceSmooth / (4 + kDiceSmooth)).epsilon(1e-12));
  const std::vector<std::uint8_t> g{1, 0, 0, 1, 1, 1, 0, 0};
  for (std::size_t i = 0; i < 8; ++i) z[g[i] ? 8 + i : i] = 40.0;
  CHECK(task_loss(z, g) <= 1e-5);
}

TEST_CASE("joint loss weighting") {
  std::mt19937_64 rng(1);
  const Tensord zb = random_logits({3, 3, 3}, rng), zv = random_logits({3, 3, 3}, rng);
  const auto gb = random_target(27, rng), gv = random_target(27, rng);
  const double lb = task_loss(zb, gb), lv = task_loss(zv, gv);
  const auto both = joint_loss(zb, zv, gb, gv, LossWeights{1, 1});
  CHECK(both.total == doctest::Approx(lb + lv).epsilon(1e-12));
  CHECK(both.brain == doctest::Approx(lb).epsilon(1e-12));
  CHECK(both.vessel == doctest::Approx(lv).epsilon(1e-12));
  const auto no_brain = joint_loss(zb, zv, gb, gv, LossWeights{0, 0.7});
  CHECK(no_brain.total == 0.7 * lv);

  CHECK_THROWS_AS(validate(LossWeights{0, 0}), UsageError);
  CHECK_THROWS_AS(validate(LossWeights{-1, 2}), UsageError);
}

TEST_CASE("model loss with a single head") {
  std::mt19937_64 rng(2);
  const auto gv = random_target(8, rng), gb = random_target(8, rng);
  PredictionPair p;
  Tensor zv(2, {2, 2, 2});
  for (float& v : zv.values()) v = static_cast<float>(rng() % 7) - 3.0f;
  p.vessel_logits = zv;
  Tensor db, dv;
  const auto l = model_loss(p, gb, gv, LossWeights{1, 2}, &db, &dv);
  CHECK(l.brain == 0.0);
  CHECK(l.total == doctest::Approx(2 * task_loss(zv, gv)).epsilon(1e-6));
  CHECK(dv.size() == 16);
}

TEST_CASE("task loss gradient matches central differences in double") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Tensord z = random_logits({3, 3, 3}, rng);
    const auto g = random_target(27, rng);
    Tensord dz;
    task_loss(z, g, &dz);
    const double h = 1e-5;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double s = z[i];
      z[i] = s + h;
      const double fp = task_loss(z, g);
      z[i] = s - h;
      const double fm = task_loss(z, g);
      z[i] = s;
      const double fd = (fp - fm) / (2 * h);
      CHECK(std::abs(fd - dz[i]) <= 1e-6 * std::max(1.0, std::abs(fd)) + 1e-9);
    }
  }
}

TEST_CASE("joint gradients include the weights") {
  std::mt19937_64 rng(4);
  const Tensord zb = random_logits({2, 2, 2}, rng), zv = random_logits({2, 2, 2}, rng);
  const auto gb = random_target(8, rng), gv = random_target(8, rng);
  Tensord db, dv, tb, tv;
  joint_loss(zb, zv, gb, gv, LossWeights{0.25, 3.0}, &db, &dv);
  task_loss(zb, gb, &tb);
  task_loss(zv, gv, &tv);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(db[i] == doctest::Approx(0.25 * tb[i]).epsilon(1e-12));
    CHECK(dv[i] == doctest::Approx(3.0 * tv[i]).epsilon(1e-12));
  }
}
