#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "jobvs/nn.hpp"
#include "jobvs/tensor.hpp"

namespace jobvs {

enum class TaskMode { joint, vessel_only, brain_only };

std::string to_string(TaskMode mode);
TaskMode task_mode_from_string(const std::string& s);

/// Lattice network shape. Column c (0..lattice_length) holds levels
/// 0..n_levels-1-c, so the lattice narrows toward the output.
struct LatticeConfig {
  int lattice_length = 2;
  int n_levels = 4;
  int base_channels = 16;
  int channel_growth = 2;
  Shape3 patch_size{64, 64, 64};
  int n_classes_per_task = 2;
  TaskMode task_mode = TaskMode::joint;

  int channels(int level) const;
  bool has_vessel_head() const { return task_mode != TaskMode::brain_only; }
  bool has_brain_head() const { return task_mode != TaskMode::vessel_only; }
};

/// Throws UsageError on invalid configurations.
void validate(const LatticeConfig& cfg);

/// Named weight tensors plus the configuration that shaped them. Keys are
/// layer paths such as "node1_0.conv0.w" or "head.vessel.0.b".
struct ModelParams {
  LatticeConfig config;
  std::map<std::string, Tensor> weights;

  std::size_t parameter_count() const;
  /// Parameter count excluding the segmentation heads.
  std::size_t backbone_parameter_count() const;
  /// FNV-1a over names and weight bytes.
  std::uint64_t checksum() const;
};

/// Gradient slots with the same keys and shapes as a ModelParams.
struct Gradients {
  std::map<std::string, Tensor> tensors;

  static Gradients zeros_like(const ModelParams& model);
  void zero();
  double l2_norm() const;
};

struct PredictionPair {
  std::optional<Tensor> vessel_logits;
  std::optional<Tensor> brain_logits;
};

/// He-initialised (fan-in) weights, deterministic in (cfg, seed).
ModelParams build_model(const LatticeConfig& cfg, std::uint64_t seed);

/// Recorded forward pass, kept alive for the backward pass.
struct LatticeGraph {
  nn::Tape tape;
  nn::Tape::Id input = 0;
  std::optional<nn::Tape::Id> vessel;
  std::optional<nn::Tape::Id> brain;

  PredictionPair outputs() const;
  /// Seeds the head gradients and propagates; parameter gradients land in
  /// the Gradients passed to forward_graph.
  void backward(const Tensor* d_vessel, const Tensor* d_brain);
  /// Gradient w.r.t. the input patch (valid after backward).
  const Tensor& input_grad() { return tape.grad(input); }
};

/// patch: [1, x, y, z] with spatial shape == cfg.patch_size.
LatticeGraph forward_graph(const ModelParams& model, const Tensor& patch, Gradients* grads);

/// Evaluation-mode forward.
PredictionPair forward(const ModelParams& model, const Tensor& patch);

/// Per-voxel softmax over the class channels of one head.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

struct ProbabilityPair {
  std::optional<Tensor> vessel;
  std::optional<Tensor> brain;
};
/// Throws NumericalError on non-finite logits.
ProbabilityPair softmax_probs(const PredictionPair& pred);

/// Checkpoint archive: magic, JSON header (config echo, caller metadata and
/// tensor index), then little-endian float32 tensor payloads.
void save_checkpoint(const ModelParams& model, const nlohmann::json& meta, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

}  // namespace jobvs
