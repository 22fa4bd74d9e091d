#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "jobvs/adversarial.hpp"
#include "jobvs/lattice.hpp"
#include "jobvs/volume.hpp"

namespace jobvs {

struct AugmentProbs {
  double flip = 0.5;   // per axis
  double rotate = 0.5; // k*90 degrees in the axial (x-y) plane
  double scale = 0.5;  // intensity x U(0.9, 1.1)
  double gamma = 0.5;  // gamma U(0.8, 1.2) on the min-max rescaled patch
};

struct TrainConfig {
  LatticeConfig lattice;
  double lr0 = 5e-4;
  double weight_decay = 1e-5;
  int max_epochs = 1000;
  int steps_per_epoch = 50;
  int batch_size = 1;
  double lr_floor = 1e-6;
  int n_folds = 2;
  std::uint64_t fold_seed = 0;
  LossWeights loss;
  ATConfig at;
  double fg_bias = 0.5;
  AugmentProbs augment;
  double val_fraction = 0.1;
  int val_patches_per_subject = 2;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

struct FoldSplit {
  int fold_id = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

/// Shuffles ids with `seed` and cuts k contiguous, near-equal test folds
/// (earlier folds take the remainder).
std::vector<FoldSplit> make_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed);

using Rng = std::mt19937_64;

/// Deterministic stream for (seed, tag...) so that any worker can
/// reproduce the sample drawn for a given step.
Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

/// Start index of a window of length p centred (p/2 before) on `center`,
/// clamped to [0, n - p].
std::size_t window_start(std::size_t center, std::size_t n, std::size_t p);

/// Crops a patch around a vessel voxel with probability fg_bias, otherwise
/// around a uniform voxel. Volumes smaller than the patch are edge-padded.
PatchTriple sample_patch(const SubjectRecord& rec, const Shape3& patch_size, double fg_bias, Rng& rng);

/// Random flips, axial 90-degree rotations (cubic in-plane patches only),
/// intensity scaling and gamma. Labels receive the spatial ops only.
PatchTriple augment(PatchTriple p, const AugmentProbs& probs, Rng& rng);

/// lr0 * (1 - epoch / max_epochs)^0.9
double lr_schedule(int epoch, double lr0, int max_epochs);
double lr_schedule(int epoch, const TrainConfig& cfg);

struct EpochLog {
  std::string phase;  // "base" or "at"
  int epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_brain = 0.0;
  double loss_vessel = 0.0;
  std::optional<double> val_loss;
  double max_abs_delta = 0.0;  // AT phase only
  std::uint64_t seed = 0;
};

struct TrainResult {
  ModelParams best;  // lowest validation loss (or last epoch without validation)
  ModelParams last;
  std::vector<EpochLog> log;
  int best_epoch = -1;
  bool early_stopped = false;
  PassCounters passes;
};

struct TrainHooks {
  /// Called whenever a new best model is selected.
  std::function<void(const ModelParams&, const EpochLog&)> on_best;
  std::function<void(const EpochLog&)> on_epoch;
  /// Number of concurrent patch-preparation workers (>= 1).
  int workers = 1;
};

/// Full fold training: base phase with the polynomial schedule and early
/// stop, followed by Free AT fine-tuning when cfg.at.enabled. Records must
/// already be preprocessed (resampled and normalised).
TrainResult train(const TrainConfig& cfg, const std::vector<SubjectRecord>& cohort, const FoldSplit& split,
                  const TrainHooks& hooks = {});

/// Free AT fine-tuning of an existing (base) model.
TrainResult fine_tune_at(const TrainConfig& cfg, ModelParams base, const std::vector<const SubjectRecord*>& train_set,
                         const std::vector<const SubjectRecord*>& val_set, const TrainHooks& hooks = {});

}  // namespace jobvs
