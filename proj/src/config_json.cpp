#include "jobvs/config_json.hpp"

#include <fstream>
#include <initializer_list>
#include <set>

namespace jobvs {
namespace {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& j, std::initializer_list<const char*> keys) : j_(j) {
    if (!j.is_object()) throw ConfigError("<root>", "expected an object");
    std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) throw ConfigError(k, "unknown field");
  }

  template <class T>
  void get(const char* key, T& out, bool required = false) const {
    auto it = j_.find(key);
    if (it == j_.end()) {
      if (required) throw ConfigError(key, "missing");
      return;
    }
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(key, "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError(key, "expected an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<long long>() < 0)
            throw ConfigError(key, "expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(key, "expected a number");
      }
      out = it->template get<T>();
    } catch (const ConfigError& e) {
      if (e.path() == key) throw;
      if (e.path() == "<root>") throw ConfigError(key, e.reason());
      throw ConfigError(std::string(key) + "." + e.path(), e.reason());
    } catch (const json::exception& e) {
      throw ConfigError(key, e.what());
    }
  }

 private:
  const json& j_;
};

}  // namespace

void to_json(json& j, TaskMode m) { j = to_string(m); }
void from_json(const json& j, TaskMode& m) {
  if (!j.is_string()) throw ConfigError("task_mode", "expected a string");
  try {
    m = task_mode_from_string(j.get<std::string>());
  } catch (const UsageError& e) {
    throw ConfigError("task_mode", e.what());
  }
}

void to_json(json& j, const LatticeConfig& c) {
  j = json{{"lattice_length", c.lattice_length},
           {"n_levels", c.n_levels},
           {"base_channels", c.base_channels},
           {"channel_growth", c.channel_growth},
           {"patch_size", c.patch_size},
           {"n_classes_per_task", c.n_classes_per_task},
           {"task_mode", c.task_mode}};
}
void from_json(const json& j, LatticeConfig& c) {
  Reader r(j, {"lattice_length", "n_levels", "base_channels", "channel_growth", "patch_size", "n_classes_per_task",
               "task_mode"});
  r.get("lattice_length", c.lattice_length);
  r.get("n_levels", c.n_levels);
  r.get("base_channels", c.base_channels);
  r.get("channel_growth", c.channel_growth);
  r.get("patch_size", c.patch_size);
  r.get("n_classes_per_task", c.n_classes_per_task);
  r.get("task_mode", c.task_mode);
}

void to_json(json& j, const LossWeights& w) { j = json{{"alpha", w.alpha}, {"beta", w.beta}}; }
void from_json(const json& j, LossWeights& w) {
  Reader r(j, {"alpha", "beta"});
  r.get("alpha", w.alpha);
  r.get("beta", w.beta);
}

void to_json(json& j, const ATConfig& a) {
  j = json{{"enabled", a.enabled},
           {"epsilon", a.epsilon},
           {"n_replays", a.n_replays},
           {"epochs", a.epochs},
           {"lr_scale", a.lr_scale}};
}
void from_json(const json& j, ATConfig& a) {
  Reader r(j, {"enabled", "epsilon", "n_replays", "epochs", "lr_scale"});
  r.get("enabled", a.enabled);
  r.get("epsilon", a.epsilon);
  r.get("n_replays", a.n_replays);
  r.get("epochs", a.epochs);
  r.get("lr_scale", a.lr_scale);
}

void to_json(json& j, const AugmentProbs& a) {
  j = json{{"flip", a.flip}, {"rotate", a.rotate}, {"scale", a.scale}, {"gamma", a.gamma}};
}
void from_json(const json& j, AugmentProbs& a) {
  Reader r(j, {"flip", "rotate", "scale", "gamma"});
  r.get("flip", a.flip);
  r.get("rotate", a.rotate);
  r.get("scale", a.scale);
  r.get("gamma", a.gamma);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lattice", c.lattice},
           {"lr0", c.lr0},
           {"weight_decay", c.weight_decay},
           {"max_epochs", c.max_epochs},
           {"steps_per_epoch", c.steps_per_epoch},
           {"batch_size", c.batch_size},
           {"lr_floor", c.lr_floor},
           {"n_folds", c.n_folds},
           {"fold_seed", c.fold_seed},
           {"loss", c.loss},
           {"at", c.at},
           {"fg_bias", c.fg_bias},
           {"augment", c.augment},
           {"val_fraction", c.val_fraction},
           {"val_patches_per_subject", c.val_patches_per_subject},
           {"seed", c.seed}};
}
void from_json(const json& j, TrainConfig& c) {
  Reader r(j, {"lattice", "lr0", "weight_decay", "max_epochs", "steps_per_epoch", "batch_size", "lr_floor", "n_folds",
               "fold_seed", "loss", "at", "fg_bias", "augment", "val_fraction", "val_patches_per_subject", "seed"});
  r.get("lattice", c.lattice);
  r.get("lr0", c.lr0);
  r.get("weight_decay", c.weight_decay);
  r.get("max_epochs", c.max_epochs);
  r.get("steps_per_epoch", c.steps_per_epoch);
  r.get("batch_size", c.batch_size);
  r.get("lr_floor", c.lr_floor);
  r.get("n_folds", c.n_folds);
  r.get("fold_seed", c.fold_seed);
  r.get("loss", c.loss);
  r.get("at", c.at);
  r.get("fg_bias", c.fg_bias);
  r.get("augment", c.augment);
  r.get("val_fraction", c.val_fraction);
  r.get("val_patches_per_subject", c.val_patches_per_subject);
  r.get("seed", c.seed);
}

void to_json(json& j, const PhantomConfig& c) {
  j = json{{"size", c.size},
           {"spacing", c.spacing},
           {"brain_axes", c.brain_axes},
           {"skull_gap", c.skull_gap},
           {"skull_thickness", c.skull_thickness},
           {"n_vessel_roots", c.n_vessel_roots},
           {"branch_depth", c.branch_depth},
           {"vessel_radius_range", {c.vessel_radius_min, c.vessel_radius_max}},
           {"background", c.background},
           {"brain", c.brain},
           {"skull", c.skull},
           {"vessel", c.vessel},
           {"noise_std", c.noise_std},
           {"seed", c.seed}};
}
void from_json(const json& j, PhantomConfig& c) {
  Reader r(j, {"size", "spacing", "brain_axes", "skull_gap", "skull_thickness", "n_vessel_roots", "branch_depth",
               "vessel_radius_range", "background", "brain", "skull", "vessel", "noise_std", "seed"});
  r.get("size", c.size);
  r.get("spacing", c.spacing);
  r.get("brain_axes", c.brain_axes);
  r.get("skull_gap", c.skull_gap);
  r.get("skull_thickness", c.skull_thickness);
  r.get("n_vessel_roots", c.n_vessel_roots);
  r.get("branch_depth", c.branch_depth);
  std::array<double, 2> radii{c.vessel_radius_min, c.vessel_radius_max};
  r.get("vessel_radius_range", radii);
  c.vessel_radius_min = radii[0];
  c.vessel_radius_max = radii[1];
  r.get("background", c.background);
  r.get("brain", c.brain);
  r.get("skull", c.skull);
  r.get("vessel", c.vessel);
  r.get("noise_std", c.noise_std);
  r.get("seed", c.seed);
}

void to_json(json& j, const CohortStats& s) {
  j = json{{"median_spacing", s.median_spacing},
           {"vessel_clip_lo", s.vessel_clip_lo},
           {"vessel_clip_hi", s.vessel_clip_hi},
           {"global_mean", s.global_mean},
           {"global_std", s.global_std}};
}
void from_json(const json& j, CohortStats& s) {
  Reader r(j, {"median_spacing", "vessel_clip_lo", "vessel_clip_hi", "global_mean", "global_std"});
  r.get("median_spacing", s.median_spacing, true);
  r.get("vessel_clip_lo", s.vessel_clip_lo, true);
  r.get("vessel_clip_hi", s.vessel_clip_hi, true);
  r.get("global_mean", s.global_mean, true);
  r.get("global_std", s.global_std, true);
  for (double v : s.median_spacing)
    if (!(v > 0.0)) throw ConfigError("median_spacing", "components must be positive");
  if (!(s.vessel_clip_lo < s.vessel_clip_hi)) throw ConfigError("vessel_clip_lo", "must be below vessel_clip_hi");
  if (!(s.global_std > 0.0)) throw ConfigError("global_std", "must be positive");
}

void to_json(json& j, const EpochLog& e) {
  j = json{{"epoch", e.epoch},
           {"lr", e.lr},
           {"loss_total", e.loss_total},
           {"loss_brain", e.loss_brain},
           {"loss_vessel", e.loss_vessel},
           {"phase", e.phase},
           {"seed", e.seed}};
  if (e.val_loss) j["val_loss"] = *e.val_loss;
  if (e.phase == "at") j["max_abs_delta"] = e.max_abs_delta;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed for " + path);
}

}  // namespace jobvs
