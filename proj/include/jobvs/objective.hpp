#pragma once

#include <cstdint>
#include <span>

#include "jobvs/lattice.hpp"
#include "jobvs/tensor.hpp"

namespace jobvs {

/// Task weights of the joint objective: alpha scales the brain term,
/// beta the vessel term.
struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
};

void validate(const LossWeights& w);

inline constexpr double kDiceSmooth = 1e-5;

/// 1 - (2 sum(p g) + s) / (sum p + sum g + s) over the whole patch.
/// If grad is non-empty it receives d loss / d probs.
template <class T>
double dice_loss(std::span<const T> probs, std::span<const std::uint8_t> target, std::span<T> grad = {});

/// Mean over voxels of -log softmax(logits)[target]. logits has two
/// channels (background, foreground).
template <class T>
double ce_loss(const BasicTensor<T>& logits, std::span<const std::uint8_t> target);

/// Dice on the softmax foreground channel plus cross-entropy. When dlogits
/// is given it is overwritten with the gradient w.r.t. the logits.
template <class T>
double task_loss(const BasicTensor<T>& logits, std::span<const std::uint8_t> target,
                 BasicTensor<T>* dlogits = nullptr);

struct LossBreakdown {
  double total = 0.0;
  double brain = 0.0;   // unweighted task loss, 0 if the head is absent
  double vessel = 0.0;  // unweighted task loss, 0 if the head is absent
};

/// alpha * L_brain + beta * L_vessel. Requires both heads. Gradients (if
/// requested) are w.r.t. each head's logits and include the weights.
template <class T>
LossBreakdown joint_loss(const BasicTensor<T>& brain_logits, const BasicTensor<T>& vessel_logits,
                         std::span<const std::uint8_t> brain_target, std::span<const std::uint8_t> vessel_target,
                         const LossWeights& w, BasicTensor<T>* d_brain = nullptr, BasicTensor<T>* d_vessel = nullptr);

LossBreakdown joint_loss(const PredictionPair& pred, std::span<const std::uint8_t> brain_target,
                         std::span<const std::uint8_t> vessel_target, const LossWeights& w);

/// Training objective for any task mode: the joint loss when both heads
/// exist, otherwise the single present task's loss (its weight applied).
LossBreakdown model_loss(const PredictionPair& pred, std::span<const std::uint8_t> brain_target,
                         std::span<const std::uint8_t> vessel_target, const LossWeights& w, Tensor* d_brain,
                         Tensor* d_vessel);

}  // namespace jobvs
