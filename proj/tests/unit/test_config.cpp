#include <doctest.h>

#include "jobvs/config_json.hpp"

using namespace jobvs;
using nlohmann::json;

namespace {

std::string error_path(const json& j) {
  try {
    (void)j.get<TrainConfig>();
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<none>";
}

}  // namespace

TEST_CASE("train config round trip") {
  TrainConfig c;
  c.lr0 = 1e-3;
  c.lattice.task_mode = TaskMode::vessel_only;
  c.lattice.patch_size = {32, 16, 48};
  c.at.enabled = true;
  c.at.n_replays = 3;
  c.augment.gamma = 0.0;
  c.seed = 1234567890123ull;
  const json j = c;
  const TrainConfig back = j.get<TrainConfig>();
  CHECK(json(back) == j);
  CHECK(back.lattice.patch_size == c.lattice.patch_size);
  CHECK(back.seed == c.seed);
  CHECK(j["lattice"]["task_mode"] == "vessel_only");
}

TEST_CASE("missing keys keep defaults") {
  const TrainConfig c = json::parse(R"({"max_epochs": 3, "lattice": {"base_channels": 8}})").get<TrainConfig>();
  CHECK(c.max_epochs == 3);
  CHECK(c.lattice.base_channels == 8);
  CHECK(c.lr0 == 5e-4);
  CHECK(c.at.epsilon == 8.0 / 255.0);
}

TEST_CASE("strict schema errors carry the field path") {
  CHECK(error_path(json::parse(R"({"lr": 1})")) == "lr");
  CHECK(error_path(json::parse(R"({"lattice": {"width": 1}})")) == "lattice.width");
  CHECK(error_path(json::parse(R"({"max_epochs": "ten"})")) == "max_epochs");
  CHECK(error_path(json::parse(R"({"max_epochs": 2.5})")) == "max_epochs");
  CHECK(error_path(json::parse(R"({"at": {"enabled": 1}})")) == "at.enabled");
  CHECK(error_path(json::parse(R"({"seed": -1})")) == "seed");
  CHECK(error_path(json::parse(R"({"lattice": {"task_mode": "both"}})")) == "lattice.task_mode");
  CHECK(error_path(json::parse(R"({"lattice": {"patch_size": [64, 64]}})")) == "lattice.patch_size");
  CHECK(error_path(json::parse(R"([1, 2])")) == "<root>");
  CHECK_THROWS_AS(json::parse(R"({"lr": 1})").get<TrainConfig>(), UsageError);
}

TEST_CASE("phantom config and cohort stats") {
  PhantomConfig p;
  p.size = 48;
  p.vessel_radius_max = 2.5;
  const PhantomConfig back = json(p).get<PhantomConfig>();
  CHECK(json(back) == json(p));
  CHECK(back.size == 48);

  CohortStats s;
  s.median_spacing = {0.3, 0.3, 0.6};
  s.vessel_clip_lo = 0.1;
  s.vessel_clip_hi = 2.0;
  s.global_mean = 0.5;
  s.global_std = 0.25;
  const CohortStats sb = json(s).get<CohortStats>();
  CHECK(sb.median_spacing == s.median_spacing);
  CHECK(sb.global_std == 0.25);

  json bad = s;
  bad.erase("global_std");
  CHECK_THROWS_AS(bad.get<CohortStats>(), UsageError);
  bad = s;
  bad["vessel_clip_lo"] = 3.0;
  CHECK_THROWS_AS(bad.get<CohortStats>(), UsageError);
}

TEST_CASE("epoch log line") {
  EpochLog e;
  e.phase = "base";
  e.epoch = 4;
  e.lr = 1e-4;
  e.loss_total = 0.5;
  e.loss_brain = 0.2;
  e.loss_vessel = 0.3;
  const json j = e;
  for (const char* k : {"epoch", "lr", "loss_total", "loss_brain", "loss_vessel"}) CHECK(j.contains(k));
  CHECK(!j.contains("val_loss"));
  CHECK(!j.contains("max_abs_delta"));
}

TEST_CASE("json file errors are data errors") {
  CHECK_THROWS_AS(read_json_file("/nonexistent/cfg.json"), DataError);
}
