#include "jobvs/objective.hpp"

#include <cmath>

namespace jobvs {
namespace {

void check_binary_head(std::size_t channels, std::size_t voxels, std::size_t targets) {
  if (channels != 2) throw DataError("loss expects two-class logits");
  if (voxels != targets) throw DataError("logits and target shapes differ");
}

}  // namespace

void validate(const LossWeights& w) {
  if (w.alpha < 0.0 || w.beta < 0.0 || !(w.alpha + w.beta > 0.0))
    throw UsageError("loss weights must be non-negative with a positive sum");
}

template <class T>
double dice_loss(std::span<const T> probs, std::span<const std::uint8_t> target, std::span<T> grad) {
  if (probs.size() != target.size()) throw DataError("dice_loss shape mismatch");
  double inter = 0.0, psum = 0.0, gsum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    inter += static_cast<double>(probs[i]) * target[i];
    psum += probs[i];
    gsum += target[i];
  }
  const double num = 2.0 * inter + kDiceSmooth;
  const double den = psum + gsum + kDiceSmooth;
  if (!grad.empty()) {
    if (grad.size() != probs.size()) throw DataError("dice_loss gradient size mismatch");
    for (std::size_t i = 0; i < probs.size(); ++i)
      grad[i] = static_cast<T>(-(2.0 * target[i] * den - num) / (den * den));
  }
  return 1.0 - num / den;
}

template <class T>
double ce_loss(const BasicTensor<T>& logits, std::span<const std::uint8_t> target) {
  const std::size_t n = logits.voxels();
  check_binary_head(logits.channels(), n, target.size());
  const T* z = logits.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z0 = z[i], z1 = z[n + i];
    const double m = std::max(z0, z1);
    const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
    sum += lse - (target[i] ? z1 : z0);
  }
  return sum / static_cast<double>(n);
}

template <class T>
double task_loss(const BasicTensor<T>& logits, std::span<const std::uint8_t> target, BasicTensor<T>* dlogits) {
  const std::size_t n = logits.voxels();
  check_binary_head(logits.channels(), n, target.size());
  const BasicTensor<T> probs = softmax(logits);
  std::span<const T> fg = probs.channel(1);
  std::vector<T> ddice;
  if (dlogits) ddice.resize(n);
  const double dice = dice_loss<T>(fg, target, ddice);
  const double ce = ce_loss(logits, target);
  if (dlogits) {
    *dlogits = BasicTensor<T>(2, logits.spatial());
    const T* p = probs.data();
    T* d = dlogits->data();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p0 = p[i], p1 = p[n + i];
      // d p1 / d z1 = p0 p1 = -d p1 / d z0
      const double dd = static_cast<double>(ddice[i]) * p0 * p1;
      const double g = target[i] ? 1.0 : 0.0;
      d[i] = static_cast<T>(-dd + (p0 - (1.0 - g)) * inv_n);
      d[n + i] = static_cast<T>(dd + (p1 - g) * inv_n);
    }
  }
  return dice + ce;
}

template <class T>
LossBreakdown joint_loss(const BasicTensor<T>& brain_logits, const BasicTensor<T>& vessel_logits,
                         std::span<const std::uint8_t> brain_target, std::span<const std::uint8_t> vessel_target,
                         const LossWeights& w, BasicTensor<T>* d_brain, BasicTensor<T>* d_vessel) {
  validate(w);
  LossBreakdown out;
  out.brain = task_loss(brain_logits, brain_target, d_brain);
  out.vessel = task_loss(vessel_logits, vessel_target, d_vessel);
  out.total = w.alpha * out.brain + w.beta * out.vessel;
  auto scale = [](BasicTensor<T>* t, double s) {
    if (t && s != 1.0)
      for (T& v : t->values()) v = static_cast<T>(v * s);
  };
  scale(d_brain, w.alpha);
  scale(d_vessel, w.beta);
  return out;
}

LossBreakdown joint_loss(const PredictionPair& pred, std::span<const std::uint8_t> brain_target,
                         std::span<const std::uint8_t> vessel_target, const LossWeights& w) {
  if (!pred.brain_logits || !pred.vessel_logits) throw UsageError("joint_loss requires both brain and vessel heads");
  return joint_loss<float>(*pred.brain_logits, *pred.vessel_logits, brain_target, vessel_target, w);
}

LossBreakdown model_loss(const PredictionPair& pred, std::span<const std::uint8_t> brain_target,
                         std::span<const std::uint8_t> vessel_target, const LossWeights& w, Tensor* d_brain,
                         Tensor* d_vessel) {
  if (pred.brain_logits && pred.vessel_logits)
    return joint_loss<float>(*pred.brain_logits, *pred.vessel_logits, brain_target, vessel_target, w, d_brain,
                             d_vessel);
  validate(w);
  LossBreakdown out;
  auto scale = [](Tensor* t, double s) {
    if (t)
      for (float& v : t->values()) v = static_cast<float>(v * s);
  };
  if (pred.vessel_logits) {
    out.vessel = task_loss(*pred.vessel_logits, vessel_target, d_vessel);
    out.total = w.beta * out.vessel;
    scale(d_vessel, w.beta);
  } else if (pred.brain_logits) {
    out.brain = task_loss(*pred.brain_logits, brain_target, d_brain);
    out.total = w.alpha * out.brain;
    scale(d_brain, w.alpha);
  } else {
    throw DataError("prediction has no heads");
  }
  return out;
}

template double dice_loss<float>(std::span<const float>, std::span<const std::uint8_t>, std::span<float>);
template double dice_loss<double>(std::span<const double>, std::span<const std::uint8_t>, std::span<double>);
template double ce_loss<float>(const BasicTensor<float>&, std::span<const std::uint8_t>);
template double ce_loss<double>(const BasicTensor<double>&, std::span<const std::uint8_t>);
template double task_loss<float>(const BasicTensor<float>&, std::span<const std::uint8_t>, BasicTensor<float>*);
template double task_loss<double>(const BasicTensor<double>&, std::span<const std::uint8_t>, BasicTensor<double>*);
template LossBreakdown joint_loss<float>(const BasicTensor<float>&, const BasicTensor<float>&,
                                         std::span<const std::uint8_t>, std::span<const std::uint8_t>,
                                         const LossWeights&, BasicTensor<float>*, BasicTensor<float>*);
template LossBreakdown joint_loss<double>(const BasicTensor<double>&, const BasicTensor<double>&,
                                          std::span<const std::uint8_t>, std::span<const std::uint8_t>,
                                          const LossWeights&, BasicTensor<double>*, BasicTensor<double>*);

}  // namespace jobvs
