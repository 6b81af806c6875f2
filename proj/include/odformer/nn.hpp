/**
 * @file nn.hpp
 * @brief Neural-network building blocks on top of the autograd tensor ops.
 *
 * Feature maps use NCHW layout; token matrices use (windows, tokens, features).
 * Convolution is cross-correlation (no kernel flip).
 */
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "odformer/ops.hpp"
#include "odformer/tensor.hpp"

namespace odf {

using Pair = std::array<std::size_t, 2>;

struct Conv2dParams {
  Tensor weight;  // (C_out, C_in, k_h, k_w)
  Tensor bias;    // (C_out); may be undefined
  Pair stride{1, 1};
  Pair dilation{1, 1};
  Pair padding{0, 0};

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t kernel_h() const { return weight.dim(2); }
  std::size_t kernel_w() const { return weight.dim(3); }
  std::size_t param_count() const { return weight.size() + (bias.defined() ? bias.size() : 0); }
};

/// floor((in + 2*pad - dil*(k-1) - 1)/stride) + 1; throws when non-positive.
inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                      std::size_t dilation, std::size_t pad) {
  const long span = static_cast<long>(dilation * (kernel - 1) + 1);
  const long padded = static_cast<long>(in + 2 * pad);
  if (stride == 0 || dilation == 0) throw ShapeError("conv2d: stride and dilation must be positive");
  if (padded < span)
    throw ShapeError("conv2d: padded extent " + std::to_string(padded) + " smaller than dilated kernel " +
                     std::to_string(span));
  return static_cast<std::size_t>((padded - span) / static_cast<long>(stride)) + 1;
}

namespace detail {

// For each (row = (c, i, j) kernel tap, col = output pixel) the flat input
// offset within one sample, or -1 when the tap lands in padding.
inline std::vector<std::int64_t> im2col_index(std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
                                              std::size_t kw, const Conv2dParams& p, std::size_t Ho,
                                              std::size_t Wo) {
  std::vector<std::int64_t> idx(C * kh * kw * Ho * Wo);
  std::size_t r = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j, ++r) {
        std::int64_t* row = idx.data() + r * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long y = static_cast<long>(oy * p.stride[0] + i * p.dilation[0]) - static_cast<long>(p.padding[0]);
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const long x = static_cast<long>(ox * p.stride[1] + j * p.dilation[1]) - static_cast<long>(p.padding[1]);
            const bool inside = y >= 0 && y < static_cast<long>(H) && x >= 0 && x < static_cast<long>(W);
            row[oy * Wo + ox] = inside ? static_cast<std::int64_t>((c * H + y) * W + x) : -1;
          }
        }
      }
  return idx;
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be NCHW, got " + to_string(x.shape()));
  if (p.weight.rank() != 4) throw ShapeError("conv2d: weight must be rank 4");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C != p.in_channels())
    throw ShapeError("conv2d: channel mismatch, input " + to_string(x.shape()) + " vs weight " +
                     to_string(p.weight.shape()));
  if (p.bias.defined() && p.bias.size() != p.out_channels())
    throw ShapeError("conv2d: bias " + to_string(p.bias.shape()) + " does not match weight " +
                     to_string(p.weight.shape()));
  const std::size_t Co = p.out_channels(), kh = p.kernel_h(), kw = p.kernel_w();
  const std::size_t Ho = conv_output_extent(H, kh, p.stride[0], p.dilation[0], p.padding[0]);
  const std::size_t Wo = conv_output_extent(W, kw, p.stride[1], p.dilation[1], p.padding[1]);
  const std::size_t K = C * kh * kw, P = Ho * Wo, in_sample = C * H * W;
  const bool pointwise = kh == 1 && kw == 1 && p.stride == Pair{1, 1} && p.padding == Pair{0, 0};

  auto index = std::make_shared<std::vector<std::int64_t>>();
  if (!pointwise) *index = detail::im2col_index(C, H, W, kh, kw, p, Ho, Wo);

  Tensor out({N, Co, Ho, Wo});
  detail::RowMatrix cols(K, P);
  detail::ConstMatMap Wm(p.weight.data().data(), Co, K);
  for (std::size_t n = 0; n < N; ++n) {
    const double* xs = x.data().data() + n * in_sample;
    detail::MatMap O(out.data().data() + n * Co * P, Co, P);
    if (pointwise) {
      O.noalias() = Wm * detail::ConstMatMap(xs, K, P);
    } else {
      const std::int64_t* id = index->data();
      double* cp = cols.data();
      for (std::size_t t = 0; t < K * P; ++t) cp[t] = id[t] >= 0 ? xs[id[t]] : 0.0;
      O.noalias() = Wm * cols;
    }
    if (p.bias.defined())
      for (std::size_t c = 0; c < Co; ++c) O.row(c).array() += p.bias[c];
  }

  auto xs = x.storage(), ws = p.weight.storage(), os = out.storage();
  auto bs = p.bias.defined() ? p.bias.storage() : nullptr;
  const Tensor* bias_ptr = p.bias.defined() ? &p.bias : nullptr;
  return detail::finish(
      "conv2d", out, {&x, &p.weight, bias_ptr}, [xs, ws, bs, os, index, N, Co, K, P, in_sample, pointwise] {
        auto gx = detail::grad_if(xs);
        auto gw = detail::grad_if(ws);
        std::span<double> gb = bs ? detail::grad_if(bs) : std::span<double>{};
        detail::ConstMatMap Wm(ws->value.data(), Co, K);
        detail::RowMatrix cols(K, P), dcols(K, P);
        for (std::size_t n = 0; n < N; ++n) {
          detail::ConstMatMap G(os->grad.data() + n * Co * P, Co, P);
          const double* xv = xs->value.data() + n * in_sample;
          if (!gb.empty())
            for (std::size_t c = 0; c < Co; ++c) gb[c] += G.row(c).sum();
          if (!gw.empty()) {
            detail::MatMap GW(gw.data(), Co, K);
            if (pointwise) {
              GW.noalias() += G * detail::ConstMatMap(xv, K, P).transpose();
            } else {
              const std::int64_t* id = index->data();
              double* cp = cols.data();
              for (std::size_t t = 0; t < K * P; ++t) cp[t] = id[t] >= 0 ? xv[id[t]] : 0.0;
              GW.noalias() += G * cols.transpose();
            }
          }
          if (!gx.empty()) {
            double* gxs = gx.data() + n * in_sample;
            if (pointwise) {
              detail::MatMap GX(gxs, K, P);
              GX.noalias() += Wm.transpose() * G;
            } else {
              dcols.noalias() = Wm.transpose() * G;
              const std::int64_t* id = index->data();
              const double* dp = dcols.data();
              for (std::size_t t = 0; t < K * P; ++t)
                if (id[t] >= 0) gxs[id[t]] += dp[t];
            }
          }
        }
      });
}

/// Horizontal 1×L then vertical L×1 convolution, both same-padded.
struct SeparablePair {
  Conv2dParams horizontal;  // (C_out, C_in, 1, L)
  Conv2dParams vertical;    // (C_out, C_out, L, 1)

  std::size_t length() const { return horizontal.kernel_w(); }
  std::size_t weight_count() const { return horizontal.weight.size() + vertical.weight.size(); }
};

inline Tensor separable_conv(const Tensor& x, const SeparablePair& sp) {
  return conv2d(conv2d(x, sp.horizontal), sp.vertical);
}

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;
};

/// Standardizes along `axis` independently at every other index, then
/// applies the per-feature affine. For NCHW maps pass axis 1; for token
/// matrices pass the last axis.
inline Tensor layernorm(const Tensor& x, const LayerNormParams& p, long axis) {
  if (!(p.eps > 0.0)) throw ShapeError("layernorm: eps must be positive");
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  const std::size_t C = x.dim(ax);
  if (p.gamma.size() != C || p.beta.size() != C)
    throw ShapeError("layernorm: affine of size " + std::to_string(p.gamma.size()) + " vs feature extent " +
                     std::to_string(C) + " of " + to_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= x.dim(d);
  for (std::size_t d = ax + 1; d < x.rank(); ++d) inner *= x.dim(d);

  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(outer * inner);
  const auto xv = x.data();
  auto ov = out.data();
  const auto g = p.gamma.data(), b = p.beta.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * C * inner + in;
      double mu = 0.0;
      for (std::size_t c = 0; c < C; ++c) mu += xv[base + c * inner];
      mu /= static_cast<double>(C);
      double var = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double d = xv[base + c * inner] - mu;
        var += d * d;
      }
      var /= static_cast<double>(C);
      const double is = 1.0 / std::sqrt(var + p.eps);
      (*inv_std)[o * inner + in] = is;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t k = base + c * inner;
        const double h = (xv[k] - mu) * is;
        (*xhat)[k] = h;
        ov[k] = h * g[c] + b[c];
      }
    }
  auto xs = x.storage(), gs = p.gamma.storage(), bs = p.beta.storage(), os = out.storage();
  return detail::finish("layernorm", out, {&x, &p.gamma, &p.beta},
                        [xs, gs, bs, os, xhat, inv_std, outer, inner, C] {
                          auto gx = detail::grad_if(xs);
                          auto gg = detail::grad_if(gs);
                          auto gb = detail::grad_if(bs);
                          const auto& G = os->grad;
                          const auto& gamma = gs->value;
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t in = 0; in < inner; ++in) {
                              const std::size_t base = o * C * inner + in;
                              double m1 = 0.0, m2 = 0.0;
                              for (std::size_t c = 0; c < C; ++c) {
                                const std::size_t k = base + c * inner;
                                const double dh = G[k] * gamma[c];
                                m1 += dh;
                                m2 += dh * (*xhat)[k];
                                if (!gg.empty()) gg[c] += G[k] * (*xhat)[k];
                                if (!gb.empty()) gb[c] += G[k];
                              }
                              if (gx.empty()) continue;
                              m1 /= static_cast<double>(C);
                              m2 /= static_cast<double>(C);
                              const double is = (*inv_std)[o * inner + in];
                              for (std::size_t c = 0; c < C; ++c) {
                                const std::size_t k = base + c * inner;
                                gx[k] += is * (G[k] * gamma[c] - m1 - (*xhat)[k] * m2);
                              }
                            }
                        });
}

enum class Mode { train, eval };

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  bool stats_ready = false;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization of an NCHW map. Train mode normalizes with the
/// batch statistics (biased variance) and folds them into the running
/// estimates (unbiased variance); eval mode applies the running estimates.
inline Tensor batchnorm(const Tensor& x, BatchNormParams& p, Mode mode) {
  if (x.rank() != 4) throw ShapeError("batchnorm: input must be NCHW, got " + to_string(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (p.gamma.size() != C || p.beta.size() != C || p.running_mean.size() != C || p.running_var.size() != C)
    throw ShapeError("batchnorm: parameter extent does not match " + std::to_string(C) + " channels");
  const auto xv = x.data();
  Tensor out(x.shape());
  auto ov = out.data();
  const auto g = p.gamma.data(), b = p.beta.data();

  if (mode == Mode::eval) {
    if (!p.stats_ready) throw std::logic_error("batchnorm: eval mode before running statistics were set");
    std::vector<double> a(C), c0(C);
    for (std::size_t c = 0; c < C; ++c) {
      a[c] = g[c] / std::sqrt(p.running_var[c] + p.eps);
      c0[c] = b[c] - a[c] * p.running_mean[c];
    }
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) {
          const std::size_t k = (n * C + c) * HW + i;
          ov[k] = a[c] * xv[k] + c0[c];
        }
    auto xs = x.storage(), gs = p.gamma.storage(), bs = p.beta.storage(), os = out.storage();
    auto rm = p.running_mean.storage(), rv = p.running_var.storage();
    const double eps = p.eps;
    return detail::finish("batchnorm_eval", out, {&x, &p.gamma, &p.beta}, [=] {
      auto gx = detail::grad_if(xs);
      auto gg = detail::grad_if(gs);
      auto gb = detail::grad_if(bs);
      for (std::size_t c = 0; c < C; ++c) {
        const double is = 1.0 / std::sqrt(rv->value[c] + eps);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t i = 0; i < HW; ++i) {
            const std::size_t k = (n * C + c) * HW + i;
            const double G = os->grad[k];
            if (!gx.empty()) gx[k] += G * gs->value[c] * is;
            if (!gg.empty()) gg[c] += G * (xs->value[k] - rm->value[c]) * is;
            if (!gb.empty()) gb[c] += G;
          }
      }
    });
  }

  const double count = static_cast<double>(N * HW);
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(C);
  for (std::size_t c = 0; c < C; ++c) {
    double mu = 0.0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < HW; ++i) mu += xv[(n * C + c) * HW + i];
    mu /= count;
    double var = 0.0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < HW; ++i) {
        const double d = xv[(n * C + c) * HW + i] - mu;
        var += d * d;
      }
    var /= count;
    const double is = 1.0 / std::sqrt(var + p.eps);
    (*inv_std)[c] = is;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t k = (n * C + c) * HW + i;
        (*xhat)[k] = (xv[k] - mu) * is;
        ov[k] = (*xhat)[k] * g[c] + b[c];
      }
    const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
    if (p.stats_ready) {
      p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * mu;
      p.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * unbiased;
    } else {
      p.running_mean[c] = mu;
      p.running_var[c] = unbiased;
    }
  }
  p.stats_ready = true;
  auto xs = x.storage(), gs = p.gamma.storage(), bs = p.beta.storage(), os = out.storage();
  return detail::finish("batchnorm", out, {&x, &p.gamma, &p.beta}, [=] {
    auto gx = detail::grad_if(xs);
    auto gg = detail::grad_if(gs);
    auto gb = detail::grad_if(bs);
    for (std::size_t c = 0; c < C; ++c) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < HW; ++i) {
          const std::size_t k = (n * C + c) * HW + i;
          const double G = os->grad[k];
          m1 += G;
          m2 += G * (*xhat)[k];
        }
      if (!gg.empty()) gg[c] += m2;
      if (!gb.empty()) gb[c] += m1;
      if (gx.empty()) continue;
      const double scale = gs->value[c] * (*inv_std)[c];
      m1 /= count;
      m2 /= count;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < HW; ++i) {
          const std::size_t k = (n * C + c) * HW + i;
          gx[k] += scale * (os->grad[k] - m1 - (*xhat)[k] * m2);
        }
    }
  });
}

namespace detail {

template <class F, class DF>
Tensor unary(const char* name, const Tensor& x, F f, DF df) {
  Tensor out(x.shape());
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = f(xv[i]);
  auto xs = x.storage(), os = out.storage();
  return finish(name, out, {&x}, [xs, os, df] {
    auto gx = grad_if(xs);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += os->grad[i] * df(xs->value[i], os->value[i]);
  });
}

inline constexpr double kGeluC = 0.7978845608;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

}  // namespace detail

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid_value(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary("sigmoid", x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

/// Tanh approximation of GELU.
inline Tensor gelu(const Tensor& x) {
  using detail::kGeluA;
  using detail::kGeluC;
  return detail::unary(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      });
}

inline Tensor softmax(const Tensor& x, long axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  const std::size_t L = x.dim(ax);
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= x.dim(d);
  for (std::size_t d = ax + 1; d < x.rank(); ++d) inner *= x.dim(d);
  Tensor out(x.shape());
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * L * inner + in;
      double mx = xv[base];
      for (std::size_t l = 1; l < L; ++l) mx = std::max(mx, xv[base + l * inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < L; ++l) z += (ov[base + l * inner] = std::exp(xv[base + l * inner] - mx));
      for (std::size_t l = 0; l < L; ++l) ov[base + l * inner] /= z;
    }
  auto xs = x.storage(), os = out.storage();
  return detail::finish("softmax", out, {&x}, [xs, os, outer, inner, L] {
    auto gx = detail::grad_if(xs);
    const auto& y = os->value;
    const auto& G = os->grad;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * L * inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < L; ++l) dot += G[base + l * inner] * y[base + l * inner];
        for (std::size_t l = 0; l < L; ++l) {
          const std::size_t k = base + l * inner;
          gx[k] += y[k] * (G[k] - dot);
        }
      }
  });
}

/// Adds a vector along the last axis.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  const std::size_t F = x.dim(x.rank() - 1);
  if (b.size() != F)
    throw ShapeError("add_bias: bias " + to_string(b.shape()) + " vs features of " + to_string(x.shape()));
  Tensor out(x.shape());
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + b[i % F];
  auto xs = x.storage(), bs = b.storage(), os = out.storage();
  return detail::finish("add_bias", out, {&x, &b}, [xs, bs, os, F] {
    auto gx = detail::grad_if(xs);
    auto gb = detail::grad_if(bs);
    for (std::size_t i = 0; i < os->grad.size(); ++i) {
      if (!gx.empty()) gx[i] += os->grad[i];
      if (!gb.empty()) gb[i % F] += os->grad[i];
    }
  });
}

struct LinearParams {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out); may be undefined
};

/// x (..., in) · W + b over the last axis.
inline Tensor linear(const Tensor& x, const LinearParams& p) {
  Tensor y;
  if (x.rank() == 1) {
    y = reshape(matmul(reshape(x, {1, x.dim(0)}), p.weight), {p.weight.dim(1)});
  } else {
    y = matmul(x, p.weight);
  }
  return p.bias.defined() ? add_bias(y, p.bias) : y;
}

namespace detail {

struct LerpTable {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

// Half-pixel centres: src = (dst + 0.5) * in/out - 0.5, clamped at 0.
inline LerpTable lerp_table(std::size_t in, std::size_t out) {
  LerpTable t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace detail

/// Bilinear resampling of an NCHW map (align_corners = false).
inline Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 4) throw ShapeError("bilinear_resize: input must be NCHW, got " + to_string(x.shape()));
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: output extents must be positive");
  const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  auto ty = std::make_shared<detail::LerpTable>(detail::lerp_table(H, out_h));
  auto tx = std::make_shared<detail::LerpTable>(detail::lerp_table(W, out_w));
  Tensor out({x.dim(0), x.dim(1), out_h, out_w});
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t p = 0; p < NC; ++p) {
    const double* src = xv.data() + p * H * W;
    double* dst = ov.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const double fy = ty->frac[oy];
      const double* r0 = src + ty->lo[oy] * W;
      const double* r1 = src + ty->hi[oy] * W;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const double fx = tx->frac[ox];
        const std::size_t x0 = tx->lo[ox], x1 = tx->hi[ox];
        dst[oy * out_w + ox] = (1.0 - fy) * ((1.0 - fx) * r0[x0] + fx * r0[x1]) + fy * ((1.0 - fx) * r1[x0] + fx * r1[x1]);
      }
    }
  }
  auto xs = x.storage(), os = out.storage();
  return detail::finish("bilinear_resize", out, {&x}, [xs, os, ty, tx, NC, H, W, out_h, out_w] {
    auto gx = detail::grad_if(xs);
    for (std::size_t p = 0; p < NC; ++p) {
      double* g = gx.data() + p * H * W;
      const double* G = os->grad.data() + p * out_h * out_w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const double fy = ty->frac[oy];
        const std::size_t y0 = ty->lo[oy], y1 = ty->hi[oy];
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const double fx = tx->frac[ox];
          const std::size_t x0 = tx->lo[ox], x1 = tx->hi[ox];
          const double v = G[oy * out_w + ox];
          g[y0 * W + x0] += v * (1.0 - fy) * (1.0 - fx);
          g[y0 * W + x1] += v * (1.0 - fy) * fx;
          g[y1 * W + x0] += v * fy * (1.0 - fx);
          g[y1 * W + x1] += v * fy * fx;
        }
      }
    }
  });
}

namespace detail {

// Flat NCHW offset of every token feature in window order: windows ordered
// (n, window row, window col), tokens row-major inside a window.
inline std::vector<std::size_t> window_index(std::size_t N, std::size_t C, std::size_t H, std::size_t W,
                                             std::size_t M) {
  std::vector<std::size_t> idx;
  idx.reserve(N * C * H * W);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t wy = 0; wy < H / M; ++wy)
      for (std::size_t wx = 0; wx < W / M; ++wx)
        for (std::size_t ty = 0; ty < M; ++ty)
          for (std::size_t tx = 0; tx < M; ++tx)
            for (std::size_t c = 0; c < C; ++c)
              idx.push_back(((n * C + c) * H + wy * M + ty) * W + wx * M + tx);
  return idx;
}

inline void check_window(const char* op, std::size_t H, std::size_t W, std::size_t M) {
  if (M == 0 || H % M != 0 || W % M != 0)
    throw ShapeError(std::string(op) + ": extents " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by window " + std::to_string(M));
}

}  // namespace detail

/// (N, C, H, W) -> (N*(H/M)*(W/M), M*M, C).
inline Tensor window_partition(const Tensor& x, std::size_t M) {
  if (x.rank() != 4) throw ShapeError("window_partition: input must be NCHW, got " + to_string(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::check_window("window_partition", H, W, M);
  return detail::gather("window_partition", x, {N * (H / M) * (W / M), M * M, C},
                        detail::window_index(N, C, H, W, M));
}

/// Inverse of window_partition.
inline Tensor window_merge(const Tensor& tokens, std::size_t N, std::size_t H, std::size_t W) {
  if (tokens.rank() != 3) throw ShapeError("window_merge: tokens must be rank 3, got " + to_string(tokens.shape()));
  const std::size_t T = tokens.dim(1), C = tokens.dim(2);
  const auto M = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(T))));
  if (M * M != T) throw ShapeError("window_merge: token count " + std::to_string(T) + " is not a square");
  detail::check_window("window_merge", H, W, M);
  if (tokens.dim(0) != N * (H / M) * (W / M))
    throw ShapeError("window_merge: window count mismatch for " + to_string(tokens.shape()));
  const auto forward = detail::window_index(N, C, H, W, M);
  std::vector<std::size_t> inverse(forward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) inverse[forward[i]] = i;
  return detail::gather("window_merge", tokens, {N, C, H, W}, std::move(inverse));
}

}  // namespace odf
