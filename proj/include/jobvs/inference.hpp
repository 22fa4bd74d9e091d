#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "jobvs/lattice.hpp"
#include "jobvs/volume.hpp"

namespace jobvs {

/// Foreground probabilities on the grid of the input volume. A head that
/// the model lacks is left empty.
struct PredictionVolume {
  std::optional<Volume> vessel_prob;
  std::optional<Volume> brain_prob;
};

/// Maps one [1, x, y, z] patch to per-head softmax probabilities.
using PatchPredictor = std::function<ProbabilityPair(const Tensor& patch)>;

PatchPredictor model_predictor(const ModelParams& model);

/// Tile origins along one axis: stride p*(1-overlap) (at least 1), last
/// tile clamped to n - p. Requires n >= p.
std::vector<std::size_t> tile_starts(std::size_t n, std::size_t p, double overlap);

/// Separable Gaussian window, sigma = p/8 per axis, peak 1.
Grid3<double> gaussian_weights(const Shape3& patch);

/// Gaussian-blended sliding-window prediction with double accumulators.
/// Volumes smaller than the patch are edge-padded and the result cropped.
PredictionVolume sliding_window_predict(const PatchPredictor& predictor, const Volume& vol, const Shape3& patch,
                                        double overlap = 0.5);
PredictionVolume sliding_window_predict(const ModelParams& model, const Volume& vol, double overlap = 0.5);

/// voxel >= threshold -> 1
LabelVolume binarize(const Volume& prob, double threshold = 0.5);

/// Zeroes vessel probabilities outside the mask; the brain channel is kept.
PredictionVolume apply_brain_mask(const PredictionVolume& pred, const LabelVolume& mask);

enum class EvalMode { bm, nbm };
std::string to_string(EvalMode m);
EvalMode eval_mode_from_string(const std::string& s);

struct ModePredictions {
  PredictionVolume nbm;
  PredictionVolume bm;
  LabelVolume mask;           // mask used for BM
  bool mask_predicted = true; // false when the ground-truth brain mask was used
};

/// NBM is the raw prediction; BM masks it with the model's own binarised
/// brain prediction, or the ground-truth brain mask for models without a
/// brain head. `rec.image` must already be normalised.
ModePredictions evaluate_modes(const ModelParams& model, const SubjectRecord& rec, double overlap = 0.5);
ModePredictions evaluate_modes(const PredictionVolume& nbm, const SubjectRecord& rec);

}  // namespace jobvs
