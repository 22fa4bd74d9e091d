#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "jobvs/lattice.hpp"
#include "jobvs/objective.hpp"

namespace jobvs {

/// One training sample: image patch [1, x, y, z] and its two label patches.
struct PatchTriple {
  Tensor image;
  Grid3<std::uint8_t> brain;
  Grid3<std::uint8_t> vessel;
};

using Batch = std::vector<PatchTriple>;

/// Adam with L2 weight decay folded into the gradient (the classic, not the
/// decoupled, formulation).
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
  };

  explicit Adam(Options opt) : opt_(opt) {}
  void step(ModelParams& model, const Gradients& grads, double lr);
  long steps() const { return t_; }
  const Options& options() const { return opt_; }

 private:
  Options opt_;
  long t_ = 0;
  std::map<std::string, std::vector<float>> m_, v_;
};

/// Counters shared by the standard and adversarial loops.
struct PassCounters {
  long forward = 0;
  long backward = 0;
  long weight_steps = 0;
};

struct StepResult {
  LossBreakdown loss;  // averaged over the batch
};

/// Forward + backward on every sample of the batch (gradients averaged),
/// followed by one Adam step. If `perturbations` is non-null it holds one
/// input offset per batch slot that is added to the image before the
/// forward pass, and `input_grads` receives d loss / d input per slot.
/// Throws NumericalError on a non-finite loss, before touching the weights.
StepResult gradient_step(ModelParams& model, Adam& opt, const Batch& batch, double lr, const LossWeights& w,
                         PassCounters& counters, const std::vector<Tensor>* perturbations = nullptr,
                         std::vector<Tensor>* input_grads = nullptr);

/// Mean loss over a batch without updating anything.
LossBreakdown evaluate_loss(const ModelParams& model, const Batch& batch, const LossWeights& w);

}  // namespace jobvs
