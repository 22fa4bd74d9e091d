#include "jobvs/nn.hpp"

#include <Eigen/Core>
#include <cmath>

namespace jobvs::nn {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Fixed-order row sum; Eigen's vectorised sum depends on buffer alignment.
double row_sum(const float* p, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += p[i];
  return s;
}

std::size_t conv_out(std::size_t n, int stride) { return (n - 1) / static_cast<std::size_t>(stride) + 1; }

Shape3 conv_out_shape(const Shape3& in, int stride) {
  return {conv_out(in[0], stride), conv_out(in[1], stride), conv_out(in[2], stride)};
}

// Column matrix [cin*27, out_voxels] for a 3x3x3 kernel with zero padding 1.
void im2col(const Tensor& in, int stride, const Shape3& os, std::vector<float>& col) {
  const Shape3& is = in.spatial();
  const std::size_t nout = voxel_count(os);
  col.assign(in.channels() * 27 * nout, 0.0f);
  const auto s = static_cast<long>(stride);
  std::size_t row = 0;
  for (std::size_t c = 0; c < in.channels(); ++c) {
    const float* src = in.channel(c).data();
    for (long kz = 0; kz < 3; ++kz)
      for (long ky = 0; ky < 3; ++ky)
        for (long kx = 0; kx < 3; ++kx, ++row) {
          float* dst = col.data() + row * nout;
          for (std::size_t oz = 0; oz < os[2]; ++oz) {
            const long iz = static_cast<long>(oz) * s + kz - 1;
            if (iz < 0 || iz >= static_cast<long>(is[2])) continue;
            for (std::size_t oy = 0; oy < os[1]; ++oy) {
              const long iy = static_cast<long>(oy) * s + ky - 1;
              if (iy < 0 || iy >= static_cast<long>(is[1])) continue;
              const float* srow = src + is[0] * (static_cast<std::size_t>(iy) + is[1] * static_cast<std::size_t>(iz));
              float* drow = dst + os[0] * (oy + os[1] * oz);
              for (std::size_t ox = 0; ox < os[0]; ++ox) {
                const long ix = static_cast<long>(ox) * s + kx - 1;
                if (ix >= 0 && ix < static_cast<long>(is[0])) drow[ox] = srow[ix];
              }
            }
          }
        }
  }
}

void col2im(const std::vector<float>& col, int stride, const Shape3& os, Tensor& din) {
  const Shape3& is = din.spatial();
  const std::size_t nout = voxel_count(os);
  const auto s = static_cast<long>(stride);
  std::size_t row = 0;
  for (std::size_t c = 0; c < din.channels(); ++c) {
    float* dst = din.channel(c).data();
    for (long kz = 0; kz < 3; ++kz)
      for (long ky = 0; ky < 3; ++ky)
        for (long kx = 0; kx < 3; ++kx, ++row) {
          const float* src = col.data() + row * nout;
          for (std::size_t oz = 0; oz < os[2]; ++oz) {
            const long iz = static_cast<long>(oz) * s + kz - 1;
            if (iz < 0 || iz >= static_cast<long>(is[2])) continue;
            for (std::size_t oy = 0; oy < os[1]; ++oy) {
              const long iy = static_cast<long>(oy) * s + ky - 1;
              if (iy < 0 || iy >= static_cast<long>(is[1])) continue;
              float* drow = dst + is[0] * (static_cast<std::size_t>(iy) + is[1] * static_cast<std::size_t>(iz));
              const float* srow = src + os[0] * (oy + os[1] * oz);
              for (std::size_t ox = 0; ox < os[0]; ++ox) {
                const long ix = static_cast<long>(ox) * s + kx - 1;
                if (ix >= 0 && ix < static_cast<long>(is[0])) drow[ix] += srow[ox];
              }
            }
          }
        }
  }
}

// Linear x2 resize along one axis of a tensor viewed as [outer, n, inner].
struct Lerp {
  std::size_t i0, i1;
  float w1;
};

std::vector<Lerp> lerp_table(std::size_t n) {
  std::vector<Lerp> t(2 * n);
  for (std::size_t j = 0; j < 2 * n; ++j) {
    double src = (static_cast<double>(j) + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    const auto i0 = static_cast<std::size_t>(src);
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    t[j] = {i0, i1, static_cast<float>(src - static_cast<double>(i0))};
  }
  return t;
}

void resize_axis(const float* in, float* out, std::size_t outer, std::size_t n, std::size_t inner) {
  const auto table = lerp_table(n);
  for (std::size_t o = 0; o < outer; ++o) {
    const float* src = in + o * n * inner;
    float* dst = out + o * 2 * n * inner;
    for (std::size_t j = 0; j < 2 * n; ++j) {
      const Lerp& l = table[j];
      const float* a = src + l.i0 * inner;
      const float* b = src + l.i1 * inner;
      float* d = dst + j * inner;
      for (std::size_t i = 0; i < inner; ++i) d[i] = a[i] * (1.0f - l.w1) + b[i] * l.w1;
    }
  }
}

void resize_axis_backward(const float* dout, float* din, std::size_t outer, std::size_t n, std::size_t inner) {
  const auto table = lerp_table(n);
  for (std::size_t o = 0; o < outer; ++o) {
    const float* src = dout + o * 2 * n * inner;
    float* dst = din + o * n * inner;
    for (std::size_t j = 0; j < 2 * n; ++j) {
      const Lerp& l = table[j];
      float* a = dst + l.i0 * inner;
      float* b = dst + l.i1 * inner;
      const float* d = src + j * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        a[i] += d[i] * (1.0f - l.w1);
        b[i] += d[i] * l.w1;
      }
    }
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  float* d = dst.data();
  const float* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

void conv3_forward(const Tensor& in, const Tensor& weight, const Tensor* bias, int stride, Tensor& out) {
  const std::size_t cin = in.channels(), cout = weight.channels();
  if (weight.voxels() != cin * 27) throw DataError("conv3 weight does not match input channels");
  const Shape3 os = conv_out_shape(in.spatial(), stride);
  const std::size_t nout = voxel_count(os);
  std::vector<float> col;
  im2col(in, stride, os, col);
  out = Tensor(cout, os);
  MapMat o(out.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(nout));
  o.noalias() = ConstMapMat(weight.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(cin * 27)) *
                ConstMapMat(col.data(), static_cast<Eigen::Index>(cin * 27), static_cast<Eigen::Index>(nout));
  if (bias)
    for (std::size_t c = 0; c < cout; ++c) o.row(static_cast<Eigen::Index>(c)).array() += (*bias)[c];
}

void conv3_backward(const Tensor& in, const Tensor& weight, int stride, const Tensor& dout, Tensor* din,
                    Tensor* dweight, Tensor* dbias) {
  const auto cin = static_cast<Eigen::Index>(in.channels());
  const auto cout = static_cast<Eigen::Index>(weight.channels());
  const Shape3& os = dout.spatial();
  const auto nout = static_cast<Eigen::Index>(voxel_count(os));
  ConstMapMat g(dout.data(), cout, nout);
  std::vector<float> col;
  if (dweight) {
    im2col(in, stride, os, col);
    MapMat(dweight->data(), cout, cin * 27).noalias() += g * ConstMapMat(col.data(), cin * 27, nout).transpose();
  }
  if (dbias)
    for (Eigen::Index c = 0; c < cout; ++c)
      (*dbias)[static_cast<std::size_t>(c)] += static_cast<float>(row_sum(dout.data() + c * nout, static_cast<std::size_t>(nout)));
  if (din) {
    col.assign(static_cast<std::size_t>(cin * 27 * nout), 0.0f);
    MapMat dcol(col.data(), cin * 27, nout);
    dcol.noalias() = ConstMapMat(weight.data(), cout, cin * 27).transpose() * g;
    col2im(col, stride, os, *din);
  }
}

void upsample2_forward(const Tensor& in, Tensor& out) {
  const Shape3& s = in.spatial();
  const std::size_t c = in.channels();
  Tensor tx(c, {2 * s[0], s[1], s[2]});
  resize_axis(in.data(), tx.data(), c * s[1] * s[2], s[0], 1);
  Tensor ty(c, {2 * s[0], 2 * s[1], s[2]});
  resize_axis(tx.data(), ty.data(), c * s[2], s[1], 2 * s[0]);
  out = Tensor(c, {2 * s[0], 2 * s[1], 2 * s[2]});
  resize_axis(ty.data(), out.data(), c, s[2], 4 * s[0] * s[1]);
}

void upsample2_backward(const Tensor& dout, Tensor& din) {
  const Shape3& s = din.spatial();
  const std::size_t c = din.channels();
  Tensor ty(c, {2 * s[0], 2 * s[1], s[2]});
  resize_axis_backward(dout.data(), ty.data(), c, s[2], 4 * s[0] * s[1]);
  Tensor tx(c, {2 * s[0], s[1], s[2]});
  resize_axis_backward(ty.data(), tx.data(), c * s[2], s[1], 2 * s[0]);
  resize_axis_backward(tx.data(), din.data(), c * s[1] * s[2], s[0], 1);
}

Tape::Id Tape::push(Tensor value, std::function<void(Tape&, Id)> back) {
  nodes_.push_back({std::move(value), Tensor{}, std::move(back)});
  return nodes_.size() - 1;
}

Tape::Id Tape::input(Tensor value) { return push(std::move(value), nullptr); }

Tensor& Tape::grad(Id id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.channels(), n.value.spatial(), 0.0f);
  return n.grad;
}

Tape::Id Tape::conv3(Id x, ParamRef weight, ParamRef bias, int stride) {
  Tensor out;
  conv3_forward(value(x), *weight.value, bias.value, stride, out);
  return push(std::move(out), [x, weight, bias, stride](Tape& t, Id self) {
    if (!t.has_grad(self)) return;
    conv3_backward(t.value(x), *weight.value, stride, t.grad(self), &t.grad(x), weight.grad, bias.grad);
  });
}

Tape::Id Tape::conv1(Id x, ParamRef weight, ParamRef bias) {
  const Tensor& in = value(x);
  const auto cin = static_cast<Eigen::Index>(in.channels());
  const auto cout = static_cast<Eigen::Index>(weight.value->channels());
  const auto n = static_cast<Eigen::Index>(in.voxels());
  if (weight.value->voxels() != in.channels()) throw DataError("conv1 weight does not match input channels");
  Tensor out(static_cast<std::size_t>(cout), in.spatial());
  MapMat o(out.data(), cout, n);
  o.noalias() = ConstMapMat(weight.value->data(), cout, cin) * ConstMapMat(in.data(), cin, n);
  for (Eigen::Index c = 0; c < cout; ++c) o.row(c).array() += (*bias.value)[static_cast<std::size_t>(c)];
  return push(std::move(out), [x, weight, bias, cin, cout, n](Tape& t, Id self) {
    if (!t.has_grad(self)) return;
    ConstMapMat g(t.grad(self).data(), cout, n);
    ConstMapMat xin(t.value(x).data(), cin, n);
    if (weight.grad) MapMat(weight.grad->data(), cout, cin).noalias() += g * xin.transpose();
    if (bias.grad)
      for (Eigen::Index c = 0; c < cout; ++c)
        (*bias.grad)[static_cast<std::size_t>(c)] +=
            static_cast<float>(row_sum(t.grad(self).data() + c * n, static_cast<std::size_t>(n)));
    MapMat(t.grad(x).data(), cin, n).noalias() += ConstMapMat(weight.value->data(), cout, cin).transpose() * g;
  });
}

Tape::Id Tape::norm_lrelu(Id x, ParamRef gamma, ParamRef beta, float slope) {
  constexpr double kEps = 1e-5;
  const Tensor& in = value(x);
  const std::size_t nc = in.channels(), nv = in.voxels();
  Tensor xhat(nc, in.spatial());
  std::vector<float> inv_std(nc);
  Tensor out(nc, in.spatial());
  for (std::size_t c = 0; c < nc; ++c) {
    auto src = in.channel(c);
    double sum = 0.0;
    for (float v : src) sum += v;
    const double mean = sum / static_cast<double>(nv);
    double ss = 0.0;
    for (float v : src) ss += (v - mean) * (v - mean);
    const double istd = 1.0 / std::sqrt(ss / static_cast<double>(nv) + kEps);
    inv_std[c] = static_cast<float>(istd);
    const float g = (*gamma.value)[c], b = (*beta.value)[c];
    auto xh = xhat.channel(c);
    auto dst = out.channel(c);
    for (std::size_t i = 0; i < nv; ++i) {
      xh[i] = static_cast<float>((src[i] - mean) * istd);
      const float z = g * xh[i] + b;
      dst[i] = z >= 0.0f ? z : slope * z;
    }
  }
  return push(std::move(out), [x, gamma, beta, slope, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                                  Tape& t, Id self) {
    if (!t.has_grad(self)) return;
    const Tensor& dy = t.grad(self);
    Tensor& dx = t.grad(x);
    const std::size_t nc = dy.channels(), nv = dy.voxels();
    std::vector<float> dxh(nv);
    for (std::size_t c = 0; c < nc; ++c) {
      const float g = (*gamma.value)[c], b = (*beta.value)[c];
      auto xh = xhat.channel(c);
      auto d = dy.channel(c);
      double dgamma = 0.0, dbeta = 0.0, sum_dxh = 0.0, sum_dxh_xh = 0.0;
      for (std::size_t i = 0; i < nv; ++i) {
        const float z = g * xh[i] + b;
        const float dz = z >= 0.0f ? d[i] : slope * d[i];
        dgamma += static_cast<double>(dz) * xh[i];
        dbeta += dz;
        dxh[i] = dz * g;
        sum_dxh += dxh[i];
        sum_dxh_xh += static_cast<double>(dxh[i]) * xh[i];
      }
      if (gamma.grad) (*gamma.grad)[c] += static_cast<float>(dgamma);
      if (beta.grad) (*beta.grad)[c] += static_cast<float>(dbeta);
      const double mean_dxh = sum_dxh / static_cast<double>(nv);
      const double mean_dxh_xh = sum_dxh_xh / static_cast<double>(nv);
      auto out = dx.channel(c);
      for (std::size_t i = 0; i < nv; ++i)
        out[i] += static_cast<float>(inv_std[c] * (dxh[i] - mean_dxh - xh[i] * mean_dxh_xh));
    }
  });
}

Tape::Id Tape::upsample2(Id x) {
  Tensor out;
  upsample2_forward(value(x), out);
  return push(std::move(out), [x](Tape& t, Id self) {
    if (!t.has_grad(self)) return;
    upsample2_backward(t.grad(self), t.grad(x));
  });
}

Tape::Id Tape::add(std::vector<Id> xs) {
  if (xs.empty()) throw DataError("add of zero tensors");
  Tensor out = value(xs.front());
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (!value(xs[i]).same_shape(out)) throw DataError("add of mismatched tensors");
    accumulate(out, value(xs[i]));
  }
  return push(std::move(out), [xs = std::move(xs)](Tape& t, Id self) {
    if (!t.has_grad(self)) return;
    for (Id x : xs) accumulate(t.grad(x), t.grad(self));
  });
}

void Tape::backward() {
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].back) nodes_[i].back(*this, i);
  }
}

}  // namespace jobvs::nn
