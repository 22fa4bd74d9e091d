#include "jobvs/inference.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace jobvs {

PatchPredictor model_predictor(const ModelParams& model) {
  return [&model](const Tensor& patch) { return softmax_probs(forward(model, patch)); };
}

std::vector<std::size_t> tile_starts(std::size_t n, std::size_t p, double overlap) {
  if (p == 0 || n < p) throw UsageError("tile_starts requires 0 < patch <= extent");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw UsageError("overlap must lie in [0, 1)");
  const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(p * (1.0 - overlap))));
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + p < n; s += stride) starts.push_back(s);
  starts.push_back(n - p);
  return starts;
}

Grid3<double> gaussian_weights(const Shape3& patch) {
  std::array<std::vector<double>, 3> w;
  for (int a = 0; a < 3; ++a) {
    const double sigma = static_cast<double>(patch[a]) / 8.0;
    const double c = (static_cast<double>(patch[a]) - 1.0) / 2.0;
    w[a].resize(patch[a]);
    for (std::size_t i = 0; i < patch[a]; ++i) {
      const double d = static_cast<double>(i) - c;
      w[a][i] = sigma > 0.0 ? std::exp(-0.5 * d * d / (sigma * sigma)) : 1.0;
    }
    const double peak = *std::max_element(w[a].begin(), w[a].end());
    for (double& v : w[a]) v /= peak;
  }
  Grid3<double> g(patch);
  for (std::size_t z = 0; z < patch[2]; ++z)
    for (std::size_t y = 0; y < patch[1]; ++y)
      for (std::size_t x = 0; x < patch[0]; ++x) g(x, y, z) = w[0][x] * w[1][y] * w[2][z];
  return g;
}

namespace {

Grid3<float> pad_to(const Grid3<float>& g, const Shape3& min_shape) {
  Shape3 s = g.shape();
  for (int a = 0; a < 3; ++a) s[a] = std::max(s[a], min_shape[a]);
  if (s == g.shape()) return g;
  Grid3<float> out(s);
  for (std::size_t z = 0; z < s[2]; ++z)
    for (std::size_t y = 0; y < s[1]; ++y)
      for (std::size_t x = 0; x < s[0]; ++x)
        out(x, y, z) = g(std::min(x, g.nx() - 1), std::min(y, g.ny() - 1), std::min(z, g.nz() - 1));
  return out;
}

struct Accumulator {
  std::vector<double> sum;
  bool used = false;
};

Volume finish(const Accumulator& acc, const std::vector<double>& wsum, const Shape3& padded, const Volume& like) {
  Volume out;
  out.spacing = like.spacing;
  out.origin = like.origin;
  out.grid = Grid3<float>(like.shape());
  for (std::size_t z = 0; z < like.shape()[2]; ++z)
    for (std::size_t y = 0; y < like.shape()[1]; ++y)
      for (std::size_t x = 0; x < like.shape()[0]; ++x) {
        const std::size_t i = x + padded[0] * (y + padded[1] * z);
        out.grid(x, y, z) = static_cast<float>(std::clamp(acc.sum[i] / wsum[i], 0.0, 1.0));
      }
  return out;
}

}  // namespace

PredictionVolume sliding_window_predict(const PatchPredictor& predictor, const Volume& vol, const Shape3& patch,
                                        double overlap) {
  validate(vol);
  const Grid3<float> img = pad_to(vol.grid, patch);
  const Shape3 s = img.shape();
  const Grid3<double> w = gaussian_weights(patch);
  const auto xs = tile_starts(s[0], patch[0], overlap);
  const auto ys = tile_starts(s[1], patch[1], overlap);
  const auto zs = tile_starts(s[2], patch[2], overlap);

  std::vector<double> wsum(img.size(), 0.0);
  Accumulator vessel, brain;
  Tensor tile(1, patch);
  for (std::size_t z0 : zs)
    for (std::size_t y0 : ys)
      for (std::size_t x0 : xs) {
        for (std::size_t z = 0; z < patch[2]; ++z)
          for (std::size_t y = 0; y < patch[1]; ++y)
            for (std::size_t x = 0; x < patch[0]; ++x) tile.at(0, x, y, z) = img(x0 + x, y0 + y, z0 + z);
        const ProbabilityPair probs = predictor(tile);
        auto add = [&](const std::optional<Tensor>& p, Accumulator& acc) {
          if (!p) return;
          if (p->spatial() != patch || p->channels() < 2) throw NumericalError("predictor returned a bad shape");
          if (!acc.used) acc.sum.assign(img.size(), 0.0);
          acc.used = true;
          const auto fg = p->channel(1);
          for (std::size_t z = 0; z < patch[2]; ++z)
            for (std::size_t y = 0; y < patch[1]; ++y)
              for (std::size_t x = 0; x < patch[0]; ++x) {
                const std::size_t li = x + patch[0] * (y + patch[1] * z);
                acc.sum[img.index(x0 + x, y0 + y, z0 + z)] += w[li] * static_cast<double>(fg[li]);
              }
        };
        add(probs.vessel, vessel);
        add(probs.brain, brain);
        for (std::size_t z = 0; z < patch[2]; ++z)
          for (std::size_t y = 0; y < patch[1]; ++y)
            for (std::size_t x = 0; x < patch[0]; ++x)
              wsum[img.index(x0 + x, y0 + y, z0 + z)] += w(x, y, z);
      }

  PredictionVolume out;
  if (vessel.used) out.vessel_prob = finish(vessel, wsum, s, vol);
  if (brain.used) out.brain_prob = finish(brain, wsum, s, vol);
  return out;
}

PredictionVolume sliding_window_predict(const ModelParams& model, const Volume& vol, double overlap) {
  return sliding_window_predict(model_predictor(model), vol, model.config.patch_size, overlap);
}

LabelVolume binarize(const Volume& prob, double threshold) {
  LabelVolume out;
  out.spacing = prob.spacing;
  out.origin = prob.origin;
  out.grid = Grid3<std::uint8_t>(prob.shape());
  for (std::size_t i = 0; i < prob.grid.size(); ++i) out.grid[i] = prob.grid[i] >= threshold ? 1 : 0;
  return out;
}

PredictionVolume apply_brain_mask(const PredictionVolume& pred, const LabelVolume& mask) {
  PredictionVolume out = pred;
  if (!out.vessel_prob) return out;
  Volume& v = *out.vessel_prob;
  if (v.shape() != mask.shape()) throw DataError("brain mask shape does not match the prediction");
  for (std::size_t i = 0; i < v.grid.size(); ++i)
    if (!mask.grid[i]) v.grid[i] = 0.0f;
  return out;
}

std::string to_string(EvalMode m) { return m == EvalMode::bm ? "BM" : "NBM"; }

EvalMode eval_mode_from_string(const std::string& s) {
  std::string u = s;
  std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return std::toupper(c); });
  if (u == "BM") return EvalMode::bm;
  if (u == "NBM") return EvalMode::nbm;
  throw UsageError("unknown evaluation mode '" + s + "' (expected BM or NBM)");
}

ModePredictions evaluate_modes(const PredictionVolume& nbm, const SubjectRecord& rec) {
  ModePredictions m;
  m.nbm = nbm;
  if (nbm.brain_prob) {
    m.mask = binarize(*nbm.brain_prob);
  } else {
    std::cerr << "warning: " << rec.id << ": model has no brain head, BM uses the ground-truth brain mask\n";
    m.mask = rec.brain;
    m.mask_predicted = false;
  }
  m.bm = apply_brain_mask(nbm, m.mask);
  return m;
}

ModePredictions evaluate_modes(const ModelParams& model, const SubjectRecord& rec, double overlap) {
  return evaluate_modes(sliding_window_predict(model, rec.image, overlap), rec);
}

}  // namespace jobvs
