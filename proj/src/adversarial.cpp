#include "jobvs/adversarial.hpp"

#include <algorithm>
#include <cmath>

namespace jobvs {
namespace {

// Largest float not above epsilon, so that stored perturbations never exceed the bound.
float float_bound(double epsilon) {
  float e = static_cast<float>(epsilon);
  if (static_cast<double>(e) > epsilon) e = std::nextafter(e, 0.0f);
  return e;
}

}  // namespace

void validate(const ATConfig& at) {
  if (!(at.epsilon >= 0.0) || !std::isfinite(at.epsilon)) throw UsageError("at.epsilon must be >= 0");
  if (at.n_replays < 1) throw UsageError("at.n_replays must be >= 1");
  if (at.epochs < 0) throw UsageError("at.epochs must be >= 0");
  if (!(at.lr_scale > 0.0)) throw UsageError("at.lr_scale must be positive");
}

Tensor project_linf(const Tensor& delta, double epsilon) {
  Tensor out = delta;
  const float e = float_bound(epsilon);
  for (float& v : out.values()) v = std::clamp(v, -e, e);
  return out;
}

ATEpochStats free_at_epoch(ModelParams& model, const BatchSource& batches, std::size_t n_batches,
                           const ATConfig& at, Adam& opt, double lr, const LossWeights& w,
                           std::vector<Tensor>& delta) {
  if (!at.enabled) throw UsageError("free_at_epoch called with adversarial training disabled");
  validate(at);
  ATEpochStats stats;
  const float eps = float_bound(at.epsilon);
  std::vector<Tensor> input_grads;
  for (std::size_t step = 0; step < n_batches; ++step) {
    const Batch batch = batches(step);
    if (delta.size() < batch.size()) delta.resize(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b)
      if (!delta[b].same_shape(batch[b].image)) delta[b] = Tensor(1, batch[b].image.spatial(), 0.0f);

    for (int replay = 0; replay < at.n_replays; ++replay) {
      const StepResult r = gradient_step(model, opt, batch, lr, w, stats.passes, &delta, &input_grads);
      double max_delta = 0.0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        Tensor& d = delta[b];
        const Tensor& g = input_grads[b];
        for (std::size_t i = 0; i < d.size(); ++i) {
          const float s = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
          d[i] = std::clamp(d[i] + eps * s, -eps, eps);
          max_delta = std::max(max_delta, static_cast<double>(std::abs(d[i])));
        }
      }
      stats.replay_losses.push_back(r.loss.total);
      stats.replay_max_delta.push_back(max_delta);
      stats.mean_loss += r.loss.total;
      stats.mean_brain += r.loss.brain;
      stats.mean_vessel += r.loss.vessel;
    }
  }
  const auto n = static_cast<double>(std::max<std::size_t>(1, stats.replay_losses.size()));
  stats.mean_loss /= n;
  stats.mean_brain /= n;
  stats.mean_vessel /= n;
  return stats;
}

}  // namespace jobvs
