#include "jobvs/optim.hpp"

#include <cmath>

namespace jobvs {

void Adam::step(ModelParams& model, const Gradients& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (auto& [name, w] : model.weights) {
    const Tensor& g = grads.tensors.at(name);
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(w.size(), 0.0f);
      v.assign(w.size(), 0.0f);
    }
    float* p = w.data();
    const float* gp = g.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(gp[i]) + opt_.weight_decay * p[i];
      m[i] = static_cast<float>(opt_.beta1 * m[i] + (1.0 - opt_.beta1) * gi);
      v[i] = static_cast<float>(opt_.beta2 * v[i] + (1.0 - opt_.beta2) * gi * gi);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] = static_cast<float>(p[i] - lr * mhat / (std::sqrt(vhat) + opt_.eps));
    }
  }
}

StepResult gradient_step(ModelParams& model, Adam& opt, const Batch& batch, double lr, const LossWeights& w,
                         PassCounters& counters, const std::vector<Tensor>* perturbations,
                         std::vector<Tensor>* input_grads) {
  if (batch.empty()) throw DataError("empty batch");
  Gradients grads = Gradients::zeros_like(model);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  StepResult res;
  if (input_grads) input_grads->assign(batch.size(), Tensor{});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const PatchTriple& s = batch[b];
    Tensor input = s.image;
    if (perturbations) {
      const Tensor& d = (*perturbations)[b];
      for (std::size_t i = 0; i < input.size(); ++i) input[i] += d[i];
    }
    LatticeGraph g = forward_graph(model, input, &grads);
    ++counters.forward;
    Tensor d_brain, d_vessel;
    const LossBreakdown loss =
        model_loss(g.outputs(), s.brain.values(), s.vessel.values(), w, &d_brain, &d_vessel);
    if (!std::isfinite(loss.total)) throw NumericalError("non-finite training loss");
    for (float& v : d_brain.values()) v = static_cast<float>(v * inv_b);
    for (float& v : d_vessel.values()) v = static_cast<float>(v * inv_b);
    g.backward(d_vessel.empty() ? nullptr : &d_vessel, d_brain.empty() ? nullptr : &d_brain);
    ++counters.backward;
    if (input_grads) (*input_grads)[b] = g.input_grad();
    res.loss.total += loss.total * inv_b;
    res.loss.brain += loss.brain * inv_b;
    res.loss.vessel += loss.vessel * inv_b;
  }
  opt.step(model, grads, lr);
  ++counters.weight_steps;
  return res;
}

LossBreakdown evaluate_loss(const ModelParams& model, const Batch& batch, const LossWeights& w) {
  LossBreakdown out;
  if (batch.empty()) return out;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const PatchTriple& s : batch) {
    const LossBreakdown l = model_loss(forward(model, s.image), s.brain.values(), s.vessel.values(), w, nullptr, nullptr);
    out.total += l.total * inv_b;
    out.brain += l.brain * inv_b;
    out.vessel += l.vessel * inv_b;
  }
  return out;
}

}  // namespace jobvs
