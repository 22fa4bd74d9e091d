#include "jobvs/training.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <future>
#include <limits>
#include <unordered_map>

namespace jobvs {
namespace {

enum Phase : std::uint64_t { kBasePhase = 1, kAtPhase = 2, kValidation = 3, kValSplit = 4 };

template <class T>
Grid3<T> pad_edge(const Grid3<T>& g, const Shape3& min_shape) {
  Shape3 s = g.shape();
  for (int a = 0; a < 3; ++a) s[a] = std::max(s[a], min_shape[a]);
  if (s == g.shape()) return g;
  Grid3<T> out(s);
  for (std::size_t z = 0; z < s[2]; ++z)
    for (std::size_t y = 0; y < s[1]; ++y)
      for (std::size_t x = 0; x < s[0]; ++x)
        out(x, y, z) = g(std::min(x, g.nx() - 1), std::min(y, g.ny() - 1), std::min(z, g.nz() - 1));
  return out;
}

template <class T>
Grid3<T> crop(const Grid3<T>& g, const Shape3& start, const Shape3& size) {
  Grid3<T> out(size);
  for (std::size_t z = 0; z < size[2]; ++z)
    for (std::size_t y = 0; y < size[1]; ++y) {
      const T* src = &g(start[0], start[1] + y, start[2] + z);
      std::copy(src, src + size[0], &out(0, y, z));
    }
  return out;
}

// Mirror along one axis of a [c, x, y, z] buffer.
template <class T>
void flip_axis(std::span<T> data, const Shape3& s, std::size_t channels, int axis) {
  const std::size_t nv = voxel_count(s);
  for (std::size_t c = 0; c < channels; ++c) {
    T* d = data.data() + c * nv;
    for (std::size_t z = 0; z < s[2]; ++z)
      for (std::size_t y = 0; y < s[1]; ++y)
        for (std::size_t x = 0; x < s[0]; ++x) {
          std::size_t xx = x, yy = y, zz = z;
          if (axis == 0) xx = s[0] - 1 - x;
          if (axis == 1) yy = s[1] - 1 - y;
          if (axis == 2) zz = s[2] - 1 - z;
          const std::size_t i = x + s[0] * (y + s[1] * z);
          const std::size_t j = xx + s[0] * (yy + s[1] * zz);
          if (i < j) std::swap(d[i], d[j]);
        }
  }
}

// One 90-degree rotation in the x-y plane (requires nx == ny).
template <class T>
void rotate_axial(std::span<T> data, const Shape3& s, std::size_t channels) {
  const std::size_t nv = voxel_count(s), n = s[0];
  std::vector<T> tmp(nv);
  for (std::size_t c = 0; c < channels; ++c) {
    T* d = data.data() + c * nv;
    for (std::size_t z = 0; z < s[2]; ++z)
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) tmp[x + n * (y + n * z)] = d[y + n * ((n - 1 - x) + n * z)];
    std::copy(tmp.begin(), tmp.end(), d);
  }
}

struct SplitSets {
  std::vector<const SubjectRecord*> train, val, test;
};

SplitSets resolve_split(const TrainConfig& cfg, const std::vector<SubjectRecord>& cohort, const FoldSplit& split) {
  std::unordered_map<std::string, const SubjectRecord*> by_id;
  for (const auto& r : cohort) by_id[r.id] = &r;
  SplitSets s;
  std::vector<const SubjectRecord*> train;
  for (const auto& id : split.train_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("training subject '" + id + "' not in cohort");
    train.push_back(it->second);
  }
  for (const auto& id : split.test_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("test subject '" + id + "' not in cohort");
    s.test.push_back(it->second);
  }
  if (train.empty()) throw DataError("fold has no training subjects");
  std::size_t n_val = 0;
  if (train.size() >= 2 && cfg.val_fraction > 0.0)
    n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(train.size()))), 1,
        train.size() - 1);
  Rng rng = derive_rng(cfg.seed, {kValSplit, static_cast<std::uint64_t>(split.fold_id)});
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> is_val(train.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  for (std::size_t i = 0; i < train.size(); ++i) (is_val[i] ? s.val : s.train).push_back(train[i]);
  return s;
}

Batch validation_batch(const TrainConfig& cfg, const std::vector<const SubjectRecord*>& val) {
  Batch out;
  for (std::size_t i = 0; i < val.size(); ++i)
    for (int k = 0; k < cfg.val_patches_per_subject; ++k) {
      Rng rng = derive_rng(cfg.seed, {kValidation, i, static_cast<std::uint64_t>(k)});
      out.push_back(sample_patch(*val[i], cfg.lattice.patch_size, 0.5, rng));
    }
  return out;
}

Batch training_batch(const TrainConfig& cfg, const std::vector<const SubjectRecord*>& train_set, Phase phase,
                     int epoch, std::size_t step) {
  Batch batch;
  for (int b = 0; b < cfg.batch_size; ++b) {
    Rng rng = derive_rng(cfg.seed, {phase, static_cast<std::uint64_t>(epoch), step, static_cast<std::uint64_t>(b)});
    std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
    const SubjectRecord& rec = *train_set[pick(rng)];
    batch.push_back(augment(sample_patch(rec, cfg.lattice.patch_size, cfg.fg_bias, rng), cfg.augment, rng));
  }
  return batch;
}

// Prepares batches for upcoming steps on worker threads. Every batch is a
// pure function of its indices, so results do not depend on scheduling.
class Prefetcher {
 public:
  Prefetcher(std::function<Batch(std::size_t)> make, std::size_t n_steps, int workers)
      : make_(std::move(make)), n_(n_steps), depth_(static_cast<std::size_t>(std::max(0, workers - 1))) {
    while (next_ < n_ && queue_.size() < depth_) launch();
  }
  Batch get(std::size_t step) {
    if (depth_ == 0) return make_(step);
    Batch b = queue_.front().get();
    queue_.pop_front();
    if (next_ < n_) launch();
    (void)step;
    return b;
  }

 private:
  void launch() {
    queue_.push_back(std::async(std::launch::async, make_, next_));
    ++next_;
  }
  std::function<Batch(std::size_t)> make_;
  std::size_t n_, depth_, next_ = 0;
  std::deque<std::future<Batch>> queue_;
};

}  // namespace

void validate(const TrainConfig& cfg) {
  validate(cfg.lattice);
  validate(cfg.loss);
  validate(cfg.at);
  if (cfg.batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (!(cfg.lr_floor > 0.0) || !(cfg.lr0 > cfg.lr_floor)) throw UsageError("require lr0 > lr_floor > 0");
  if (cfg.weight_decay < 0.0) throw UsageError("weight_decay must be >= 0");
  if (cfg.max_epochs < 1) throw UsageError("max_epochs must be >= 1");
  if (cfg.steps_per_epoch < 1) throw UsageError("steps_per_epoch must be >= 1");
  if (cfg.n_folds < 1) throw UsageError("n_folds must be >= 1");
  if (cfg.fg_bias < 0.0 || cfg.fg_bias > 1.0) throw UsageError("fg_bias must lie in [0, 1]");
  if (cfg.val_fraction < 0.0 || cfg.val_fraction >= 1.0) throw UsageError("val_fraction must lie in [0, 1)");
}

std::vector<FoldSplit> make_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed) {
  if (k < 1) throw UsageError("fold count must be >= 1");
  if (ids.size() < static_cast<std::size_t>(k)) throw DataError("cohort smaller than the number of folds");
  std::vector<std::string> shuffled = ids;
  std::sort(shuffled.begin(), shuffled.end());
  Rng rng(seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const std::size_t n = shuffled.size(), kk = static_cast<std::size_t>(k);
  std::vector<FoldSplit> folds(kk);
  std::size_t begin = 0;
  for (std::size_t f = 0; f < kk; ++f) {
    const std::size_t len = n / kk + (f < n % kk ? 1 : 0);
    folds[f].fold_id = static_cast<int>(f);
    for (std::size_t i = 0; i < n; ++i) {
      const bool test = i >= begin && i < begin + len;
      (test ? folds[f].test_ids : folds[f].train_ids).push_back(shuffled[i]);
    }
    begin += len;
  }
  return folds;
}

Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  for (std::uint64_t t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

std::size_t window_start(std::size_t center, std::size_t n, std::size_t p) {
  if (p >= n) return 0;
  const std::size_t half = p / 2;
  const std::size_t start = center > half ? center - half : 0;
  return std::min(start, n - p);
}

PatchTriple sample_patch(const SubjectRecord& rec, const Shape3& patch_size, double fg_bias, Rng& rng) {
  const Grid3<float> image = pad_edge(rec.image.grid, patch_size);
  const Grid3<std::uint8_t> brain = pad_edge(rec.brain.grid, patch_size);
  const Grid3<std::uint8_t> vessel = pad_edge(rec.vessel.grid, patch_size);
  const Shape3& s = image.shape();

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const bool foreground = u01(rng) < fg_bias;
  std::size_t center = 0;
  bool chosen = false;
  if (foreground) {
    std::vector<std::size_t> fg;
    for (std::size_t i = 0; i < vessel.size(); ++i)
      if (vessel[i]) fg.push_back(i);
    if (!fg.empty()) {
      center = fg[std::uniform_int_distribution<std::size_t>(0, fg.size() - 1)(rng)];
      chosen = true;
    }
  }
  if (!chosen) center = std::uniform_int_distribution<std::size_t>(0, image.size() - 1)(rng);
  const std::size_t cx = center % s[0], cy = (center / s[0]) % s[1], cz = center / (s[0] * s[1]);
  const Shape3 start{window_start(cx, s[0], patch_size[0]), window_start(cy, s[1], patch_size[1]),
                     window_start(cz, s[2], patch_size[2])};

  PatchTriple p;
  const Grid3<float> img = crop(image, start, patch_size);
  p.image = Tensor(1, patch_size);
  std::copy(img.values().begin(), img.values().end(), p.image.data());
  p.brain = crop(brain, start, patch_size);
  p.vessel = crop(vessel, start, patch_size);
  return p;
}

PatchTriple augment(PatchTriple p, const AugmentProbs& probs, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Shape3 s = p.image.spatial();
  for (int axis = 0; axis < 3; ++axis) {
    if (u01(rng) < probs.flip) {
      flip_axis(p.image.values(), s, 1, axis);
      flip_axis(p.brain.values(), s, 1, axis);
      flip_axis(p.vessel.values(), s, 1, axis);
    }
  }
  const bool rotate = u01(rng) < probs.rotate;
  const int turns = 1 + static_cast<int>(std::uniform_int_distribution<int>(0, 2)(rng));
  if (rotate && s[0] == s[1]) {
    for (int k = 0; k < turns; ++k) {
      rotate_axial(p.image.values(), s, 1);
      rotate_axial(p.brain.values(), s, 1);
      rotate_axial(p.vessel.values(), s, 1);
    }
  }
  const bool scale = u01(rng) < probs.scale;
  const double factor = 0.9 + 0.2 * u01(rng);
  if (scale)
    for (float& v : p.image.values()) v = static_cast<float>(v * factor);
  const bool gamma = u01(rng) < probs.gamma;
  const double g = 0.8 + 0.4 * u01(rng);
  if (gamma) {
    const auto [mn_it, mx_it] = std::minmax_element(p.image.values().begin(), p.image.values().end());
    const double mn = *mn_it, range = *mx_it - *mn_it;
    if (range > 0.0)
      for (float& v : p.image.values()) v = static_cast<float>(mn + range * std::pow((v - mn) / range, g));
  }
  return p;
}

double lr_schedule(int epoch, double lr0, int max_epochs) {
  const double frac = std::clamp(static_cast<double>(epoch) / static_cast<double>(max_epochs), 0.0, 1.0);
  return lr0 * std::pow(1.0 - frac, 0.9);
}

double lr_schedule(int epoch, const TrainConfig& cfg) { return lr_schedule(epoch, cfg.lr0, cfg.max_epochs); }

namespace {

void update_best(TrainResult& res, const ModelParams& model, const EpochLog& log, double score, double& best_score,
                 const TrainHooks& hooks) {
  if (score < best_score) {
    best_score = score;
    res.best = model;
    res.best_epoch = log.epoch;
    if (hooks.on_best) hooks.on_best(model, log);
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<SubjectRecord>& cohort, const FoldSplit& split,
                  const TrainHooks& hooks) {
  validate(cfg);
  const SplitSets sets = resolve_split(cfg, cohort, split);
  const Batch val = validation_batch(cfg, sets.val);

  TrainResult res;
  ModelParams model = build_model(cfg.lattice, cfg.seed);
  Adam opt({.weight_decay = cfg.weight_decay});
  double best_score = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    if (lr < cfg.lr_floor) {
      res.early_stopped = true;
      break;
    }
    const auto steps = static_cast<std::size_t>(cfg.steps_per_epoch);
    Prefetcher batches([&](std::size_t step) { return training_batch(cfg, sets.train, kBasePhase, epoch, step); },
                       steps, hooks.workers);
    EpochLog log{.phase = "base", .epoch = epoch, .lr = lr, .seed = cfg.seed};
    for (std::size_t step = 0; step < steps; ++step) {
      const StepResult r = gradient_step(model, opt, batches.get(step), lr, cfg.loss, res.passes);
      log.loss_total += r.loss.total / static_cast<double>(steps);
      log.loss_brain += r.loss.brain / static_cast<double>(steps);
      log.loss_vessel += r.loss.vessel / static_cast<double>(steps);
    }
    if (!val.empty()) log.val_loss = evaluate_loss(model, val, cfg.loss).total;
    res.log.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);
    update_best(res, model, log, log.val_loss.value_or(log.loss_total), best_score, hooks);
  }
  res.last = model;
  if (res.best_epoch < 0) res.best = model;

  if (cfg.at.enabled && cfg.at.epochs > 0) {
    TrainResult ft = fine_tune_at(cfg, res.best, sets.train, sets.val, hooks);
    res.log.insert(res.log.end(), ft.log.begin(), ft.log.end());
    res.best = std::move(ft.best);
    res.last = std::move(ft.last);
    res.best_epoch = ft.best_epoch;
    res.passes.forward += ft.passes.forward;
    res.passes.backward += ft.passes.backward;
    res.passes.weight_steps += ft.passes.weight_steps;
  }
  return res;
}

TrainResult fine_tune_at(const TrainConfig& cfg, ModelParams base, const std::vector<const SubjectRecord*>& train_set,
                         const std::vector<const SubjectRecord*>& val_set, const TrainHooks& hooks) {
  validate(cfg);
  if (train_set.empty()) throw DataError("fine-tuning needs training subjects");
  ATConfig at = cfg.at;
  at.enabled = true;
  const Batch val = validation_batch(cfg, val_set);
  const double lr0 = cfg.lr0 * at.lr_scale;

  TrainResult res;
  ModelParams model = std::move(base);
  Adam opt({.weight_decay = cfg.weight_decay});
  std::vector<Tensor> delta;
  double best_score = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < at.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, lr0, at.epochs);
    if (lr < cfg.lr_floor) {
      res.early_stopped = true;
      break;
    }
    const auto steps = static_cast<std::size_t>(cfg.steps_per_epoch);
    Prefetcher batches([&](std::size_t step) { return training_batch(cfg, train_set, kAtPhase, epoch, step); },
                       steps, hooks.workers);
    const ATEpochStats st =
        free_at_epoch(model, [&](std::size_t step) { return batches.get(step); }, steps, at, opt, lr, cfg.loss, delta);
    EpochLog log{.phase = "at",
                 .epoch = epoch,
                 .lr = lr,
                 .loss_total = st.mean_loss,
                 .loss_brain = st.mean_brain,
                 .loss_vessel = st.mean_vessel,
                 .seed = cfg.seed};
    for (double d : st.replay_max_delta) log.max_abs_delta = std::max(log.max_abs_delta, d);
    res.passes.forward += st.passes.forward;
    res.passes.backward += st.passes.backward;
    res.passes.weight_steps += st.passes.weight_steps;
    if (!val.empty()) log.val_loss = evaluate_loss(model, val, cfg.loss).total;
    res.log.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);
    update_best(res, model, log, log.val_loss.value_or(log.loss_total), best_score, hooks);
  }
  res.last = model;
  if (res.best_epoch < 0) res.best = model;
  return res;
}

}  // namespace jobvs
