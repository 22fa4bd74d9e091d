#pragma once

#include <functional>
#include <vector>

#include "jobvs/tensor.hpp"

namespace jobvs::nn {

/// Weight plus optional gradient slot. `grad` is null in evaluation mode.
struct ParamRef {
  const Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

/// Reverse-mode tape over tensor activations. Operations append a node and
/// a closure that propagates the node's gradient to its inputs and to the
/// parameter gradient slots handed in at construction.
class Tape {
 public:
  using Id = std::size_t;

  Id input(Tensor value);
  const Tensor& value(Id id) const { return nodes_[id].value; }
  /// Gradient of a node, allocated (zero) on first access.
  Tensor& grad(Id id);
  bool has_grad(Id id) const { return !nodes_[id].grad.empty(); }
  std::size_t size() const { return nodes_.size(); }

  /// 3x3x3 convolution, zero padding 1, stride 1 or 2, optional bias.
  Id conv3(Id x, ParamRef weight, ParamRef bias, int stride);
  /// 1x1x1 convolution with bias.
  Id conv1(Id x, ParamRef weight, ParamRef bias);
  /// Instance normalisation with affine scale/shift followed by leaky ReLU.
  Id norm_lrelu(Id x, ParamRef gamma, ParamRef beta, float slope = 0.01f);
  /// Trilinear x2 upsampling (half-pixel centres, edge clamped).
  Id upsample2(Id x);
  /// Elementwise sum of equally shaped nodes.
  Id add(std::vector<Id> xs);

  /// Runs every recorded closure in reverse creation order.
  void backward();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&, Id)> back;
  };
  Id push(Tensor value, std::function<void(Tape&, Id)> back);
  std::vector<Node> nodes_;
};

// Raw kernels, exposed for testing against direct reference loops.
void conv3_forward(const Tensor& in, const Tensor& weight, const Tensor* bias, int stride, Tensor& out);
void conv3_backward(const Tensor& in, const Tensor& weight, int stride, const Tensor& dout, Tensor* din,
                    Tensor* dweight, Tensor* dbias);
void upsample2_forward(const Tensor& in, Tensor& out);
void upsample2_backward(const Tensor& dout, Tensor& din);

}  // namespace jobvs::nn
