#pragma once

#include <functional>
#include <vector>

#include "jobvs/optim.hpp"

namespace jobvs {

/// "Free" adversarial fine-tuning: every mini-batch is replayed n_replays
/// times; each replay updates the weights and takes one signed-gradient
/// ascent step of size epsilon on a persistent input perturbation, which is
/// then projected back onto the L-infinity ball of radius epsilon.
struct ATConfig {
  bool enabled = false;
  double epsilon = 8.0 / 255.0;  // normalised-intensity units
  int n_replays = 5;
  int epochs = 100;
  double lr_scale = 0.1;  // fine-tuning learning rate relative to lr0
};

void validate(const ATConfig& at);

/// Per-voxel clamp to [-epsilon, epsilon].
Tensor project_linf(const Tensor& delta, double epsilon);

struct ATEpochStats {
  PassCounters passes;
  std::vector<double> replay_losses;  // one entry per (mini-batch, replay)
  std::vector<double> replay_max_delta;
  double mean_loss = 0.0;
  double mean_brain = 0.0;
  double mean_vessel = 0.0;
};

/// Produces the mini-batch for step index 0..n_batches-1.
using BatchSource = std::function<Batch(std::size_t step)>;

/// One fine-tuning epoch over n_batches mini-batches. `delta` holds one
/// perturbation per batch slot; it is created (zero) on first use and
/// carried across mini-batches and epochs by the caller.
ATEpochStats free_at_epoch(ModelParams& model, const BatchSource& batches, std::size_t n_batches,
                           const ATConfig& at, Adam& opt, double lr, const LossWeights& w,
                           std::vector<Tensor>& delta);

}  // namespace jobvs
