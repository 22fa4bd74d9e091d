#include <doctest.h>

#include <set>

#include "jobvs/metrics.hpp"
#include "jobvs/phantom.hpp"

using namespace jobvs;

namespace {

double masked_mean(const Volume& v, const LabelVolume& m) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.grid.size(); ++i)
    if (m.grid[i]) {
      s += v.grid[i];
      ++n;
    }
  return s / static_cast<double>(n);
}

std::size_t count(const LabelVolume& m) {
  std::size_t n = 0;
  for (auto v : m.grid.values()) n += v;
  return n;
}

}  // namespace

TEST_CASE("phantom is deterministic") {
  const PhantomConfig cfg;
  const SubjectRecord a = generate_phantom(cfg, 3), b = generate_phantom(cfg, 3);
  CHECK(a.id == "phantom_003");
  CHECK(a.image.grid == b.image.grid);
  CHECK(a.brain.grid == b.brain.grid);
  CHECK(a.vessel.grid == b.vessel.grid);
}

TEST_CASE("phantom structure invariants") {
  const PhantomConfig cfg;
  for (std::size_t i = 0; i < 4; ++i) {
    const SubjectRecord r = generate_phantom(cfg, i);
    const LabelVolume skull = skull_mask(cfg, i);
    for (std::size_t k = 0; k < r.vessel.grid.size(); ++k) {
      if (r.vessel.grid[k]) REQUIRE(r.brain.grid[k]);
      if (skull.grid[k]) REQUIRE(!r.brain.grid[k]);
    }
    CHECK(count_components26(r.brain.grid) == 1);
    const double frac = static_cast<double>(count(r.vessel)) / static_cast<double>(count(r.brain));
    CHECK(frac >= 0.001);
    CHECK(frac <= 0.05);
  }
}

TEST_CASE("skull intensity is confusable with vessels") {
  PhantomConfig cfg;
  cfg.noise_std = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const SubjectRecord r = generate_phantom(cfg, i);
    const double skull = masked_mean(r.image, skull_mask(cfg, i));
    const double vessel = masked_mean(r.image, r.vessel);
    CHECK(std::abs(skull - vessel) <= 0.1 * vessel);
  }
}

TEST_CASE("cohort ids and vessel trees differ") {
  const auto c = generate_cohort(PhantomConfig{}, 10);
  std::set<std::string> ids;
  for (const auto& r : c) ids.insert(r.id);
  CHECK(ids.size() == 10);
  for (std::size_t i = 0; i + 1 < c.size(); ++i) CHECK(c[i].vessel.grid != c[i + 1].vessel.grid);

  PhantomConfig other;
  other.seed = 99;
  const SubjectRecord a = generate_phantom(PhantomConfig{}, 0), b = generate_phantom(other, 0);
  CHECK(dsc(a.vessel.grid.values(), b.vessel.grid.values()) < 0.9);
  CHECK_THROWS_AS(generate_cohort(PhantomConfig{}, 0), UsageError);
}

TEST_CASE("phantom config validation") {
  PhantomConfig c;
  c.size = 16;
  CHECK_THROWS_AS(validate(c), UsageError);
  c = {};
  c.skull = 0.5;
  CHECK_THROWS_AS(validate(c), UsageError);
  c = {};
  c.vessel_radius_min = 0.5;
  CHECK_THROWS_AS(validate(c), UsageError);
  CHECK_NOTHROW(validate(PhantomConfig{}));
}
