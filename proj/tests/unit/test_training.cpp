#include <doctest.h>

#include <set>

#include "jobvs/phantom.hpp"
#include "jobvs/preprocess.hpp"
#include "jobvs/training.hpp"

using namespace jobvs;

namespace {

std::vector<std::string> numbered(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("s" + std::to_string(i));
  return ids;
}

bool any(const Grid3<std::uint8_t>& g) {
  for (auto v : g.values())
    if (v) return true;
  return false;
}

PhantomConfig small_phantom() {
  PhantomConfig c;
  c.size = 32;
  return c;
}

std::vector<SubjectRecord> toy_cohort(std::size_t n) {
  auto raw = generate_cohort(small_phantom(), n);
  const CohortStats st = compute_cohort_stats(raw);
  std::vector<SubjectRecord> out;
  for (const auto& r : raw) out.push_back(preprocess_record(r, st));
  return out;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.lattice.n_levels = 3;
  c.lattice.base_channels = 4;
  c.lattice.patch_size = {16, 16, 16};
  c.max_epochs = 5;
  c.steps_per_epoch = 6;
  c.lr0 = 3e-3;
  return c;
}

}  // namespace

TEST_CASE("fold sizes") {
  auto sizes = [](std::size_t n) {
    std::vector<std::size_t> s;
    for (const auto& f : make_folds(numbered(n), 2, 0)) s.push_back(f.test_ids.size());
    return s;
  };
  CHECK(sizes(57) == std::vector<std::size_t>{29, 28});
  CHECK(sizes(10) == std::vector<std::size_t>{5, 5});

  const auto folds = make_folds(numbered(11), 3, 4);
  std::set<std::string> tested;
  for (const auto& f : folds) {
    CHECK(f.train_ids.size() + f.test_ids.size() == 11);
    for (const auto& id : f.test_ids) {
      CHECK(tested.insert(id).second);
      CHECK(std::find(f.train_ids.begin(), f.train_ids.end(), id) == f.train_ids.end());
    }
  }
  CHECK(tested.size() == 11);
  // order of the input list does not matter
  auto rev = numbered(11);
  std::reverse(rev.begin(), rev.end());
  CHECK(make_folds(rev, 3, 4)[1].test_ids == folds[1].test_ids);
  CHECK_THROWS_AS(make_folds(numbered(1), 2, 0), DataError);
}

TEST_CASE("learning rate schedule") {
  CHECK(lr_schedule(0, 5e-4, 100) == 5e-4);
  CHECK(lr_schedule(100, 5e-4, 100) == 0.0);
  CHECK(lr_schedule(50, 5e-4, 100) == doctest::Approx(5e-4 * std::pow(0.5, 0.9)));
  double prev = 1.0;
  for (int e = 0; e <= 100; ++e) {
    const double lr = lr_schedule(e, 5e-4, 100);
    CHECK(lr <= prev);
    prev = lr;
  }
  const TrainConfig d;
  CHECK(d.lr0 == 5e-4);
  CHECK(d.weight_decay == 1e-5);
  CHECK(d.batch_size == 1);
  CHECK(d.loss.alpha == 1.0);
  CHECK(d.loss.beta == 1.0);
  CHECK(d.lattice.lattice_length == 2);
}

TEST_CASE("window start clamps") {
  CHECK(window_start(0, 64, 32) == 0);
  CHECK(window_start(40, 64, 32) == 24);
  CHECK(window_start(63, 64, 32) == 32);
  CHECK(window_start(3, 8, 8) == 0);
}

TEST_CASE("foreground-biased sampling") {
  const SubjectRecord rec = generate_phantom(small_phantom(), 0);
  const Shape3 p{16, 16, 16};
  Rng rng(1);
  for (int i = 0; i < 50; ++i) CHECK(any(sample_patch(rec, p, 1.0, rng).vessel));

  Rng a = derive_rng(5, {1, 2, 3}), b = derive_rng(5, {1, 2, 3});
  const PatchTriple pa = sample_patch(rec, p, 0.5, a), pb = sample_patch(rec, p, 0.5, b);
  CHECK(pa.image == pb.image);
  CHECK(pa.vessel == pb.vessel);
  Rng c = derive_rng(5, {1, 2, 4});
  CHECK(derive_rng(5, {1, 2, 3})() != c());
}

TEST_CASE("uniform sampling matches direct coverage count") {
  const SubjectRecord rec = generate_phantom(small_phantom(), 1);
  const Shape3 p{12, 12, 12};
  const Shape3 s = rec.vessel.shape();
  // Oracle: for every possible centre, does its clamped window contain a vessel voxel?
  std::size_t covered = 0;
  for (std::size_t cz = 0; cz < s[2]; ++cz)
    for (std::size_t cy = 0; cy < s[1]; ++cy)
      for (std::size_t cx = 0; cx < s[0]; ++cx) {
        const std::size_t x0 = std::min(cx >= 6 ? cx - 6 : 0, s[0] - 12);
        const std::size_t y0 = std::min(cy >= 6 ? cy - 6 : 0, s[1] - 12);
        const std::size_t z0 = std::min(cz >= 6 ? cz - 6 : 0, s[2] - 12);
        bool hit = false;
        for (std::size_t z = z0; z < z0 + 12 && !hit; ++z)
          for (std::size_t y = y0; y < y0 + 12 && !hit; ++y)
            for (std::size_t x = x0; x < x0 + 12 && !hit; ++x) hit = rec.vessel.grid(x, y, z) != 0;
        covered += hit;
      }
  const double expected = static_cast<double>(covered) / static_cast<double>(voxel_count(s));
  Rng rng(7);
  const int draws = 1000;
  int hits = 0;
  for (int i = 0; i < draws; ++i) hits += any(sample_patch(rec, p, 0.0, rng).vessel);
  const double sigma = std::sqrt(expected * (1 - expected) / draws);
  CHECK(expected > 0.05);
  CHECK(expected < 0.95);
  CHECK(std::abs(hits / static_cast<double>(draws) - expected) <= 3 * sigma);
}

TEST_CASE("small volumes are edge padded") {
  SubjectRecord r;
  r.image.grid = Grid3<float>({4, 4, 4}, 1.0f);
  r.brain.grid = Grid3<std::uint8_t>({4, 4, 4}, 1);
  r.vessel.grid = Grid3<std::uint8_t>({4, 4, 4}, 0);
  r.vessel.grid(1, 1, 1) = 1;
  Rng rng(0);
  const PatchTriple p = sample_patch(r, {8, 8, 8}, 1.0, rng);
  CHECK(p.image.spatial() == Shape3{8, 8, 8});
  for (float v : p.image.values()) CHECK(v == 1.0f);
  CHECK(any(p.vessel));
}

TEST_CASE("augmentation") {
  const SubjectRecord rec = generate_phantom(small_phantom(), 2);
  Rng rng(3);
  const PatchTriple base = sample_patch(rec, {16, 16, 16}, 1.0, rng);

  Rng r0(4);
  const PatchTriple same = augment(base, AugmentProbs{0, 0, 0, 0}, r0);
  CHECK(same.image == base.image);
  CHECK(same.vessel == base.vessel);
  CHECK(same.brain == base.brain);

  for (int i = 0; i < 20; ++i) {
    Rng r(static_cast<std::uint64_t>(i));
    const PatchTriple a = augment(base, AugmentProbs{}, r);
    std::size_t nv = 0, nb = 0, base_nv = 0;
    for (auto v : a.vessel.values()) {
      CHECK(v <= 1);
      nv += v;
    }
    for (auto v : a.brain.values()) CHECK(v <= 1);
    for (auto v : base.vessel.values()) base_nv += v;
    for (auto v : a.brain.values()) nb += v;
    CHECK(nv == base_nv);  // spatial ops are permutations
    (void)nb;
  }

  // flipping twice on one axis is the identity: two flip-only passes with
  // probability 1 flip every axis twice.
  Rng r1(9);
  const PatchTriple once = augment(base, AugmentProbs{1, 0, 0, 0}, r1);
  CHECK(once.image != base.image);
  const PatchTriple twice = augment(once, AugmentProbs{1, 0, 0, 0}, r1);
  CHECK(twice.image == base.image);
  CHECK(twice.vessel == base.vessel);
}

TEST_CASE("toy training lowers the loss and is reproducible") {
  const auto cohort = toy_cohort(2);
  FoldSplit split{0, {cohort[0].id, cohort[1].id}, {}};
  TrainConfig cfg = toy_config();
  cfg.val_fraction = 0.0;
  const TrainResult a = train(cfg, cohort, split);
  REQUIRE(a.log.size() == 5);
  CHECK(a.log.back().loss_total < a.log.front().loss_total);
  CHECK(a.log.front().lr == cfg.lr0);
  CHECK(a.passes.weight_steps == 5 * 6);

  const TrainResult b = train(cfg, cohort, split);
  CHECK(a.last.checksum() == b.last.checksum());
  TrainHooks h;
  h.workers = 2;
  CHECK(train(cfg, cohort, split, h).last.checksum() == a.last.checksum());
}

TEST_CASE("early stop at the first epoch below the floor") {
  const auto cohort = toy_cohort(2);
  FoldSplit split{0, {cohort[0].id, cohort[1].id}, {}};
  TrainConfig cfg = toy_config();
  cfg.max_epochs = 10;
  cfg.steps_per_epoch = 1;
  cfg.lr_floor = lr_schedule(7, cfg.lr0, 10) * 0.999;  // epochs 0..7 run, epoch 8 is below
  const TrainResult r = train(cfg, cohort, split);
  CHECK(r.early_stopped);
  CHECK(r.log.size() == 8);
  for (const auto& e : r.log) CHECK(e.lr >= cfg.lr_floor);
}

TEST_CASE("validation split and AT phase logging") {
  const auto cohort = toy_cohort(3);
  FoldSplit split{0, {cohort[0].id, cohort[1].id, cohort[2].id}, {}};
  TrainConfig cfg = toy_config();
  cfg.max_epochs = 2;
  cfg.steps_per_epoch = 2;
  cfg.at.enabled = true;
  cfg.at.epochs = 1;
  cfg.at.n_replays = 2;
  int best_calls = 0;
  TrainHooks h;
  h.on_best = [&](const ModelParams&, const EpochLog&) { ++best_calls; };
  const TrainResult r = train(cfg, cohort, split, h);
  REQUIRE(r.log.size() == 3);
  CHECK(r.log[0].phase == "base");
  CHECK(r.log[2].phase == "at");
  CHECK(r.log[0].val_loss.has_value());
  CHECK(r.log[2].max_abs_delta <= cfg.at.epsilon);
  CHECK(r.log[2].max_abs_delta > 0.0);
  CHECK(best_calls >= 1);
  // base: 2 epochs x 2 steps; AT: 1 epoch x 2 steps x 2 replays
  CHECK(r.passes.weight_steps == 4 + 4);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.batch_size = 0;
  CHECK_THROWS_AS(validate(c), UsageError);
  c = {};
  c.lr_floor = 1.0;
  CHECK_THROWS_AS(validate(c), UsageError);
  c = {};
  c.fg_bias = 1.5;
  CHECK_THROWS_AS(validate(c), UsageError);
  CHECK_NOTHROW(validate(TrainConfig{}));
}
