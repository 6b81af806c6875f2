/**
 * @file params.hpp
 * @brief Parameter naming, initialization and counting helpers shared by the
 * network modules.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "odformer/nn.hpp"

namespace odf {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using NamedTensors = std::vector<NamedTensor>;

/// Seeded generator with platform-independent uniform draws (initialization,
/// augmentation, synthetic data, shuffling).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

  Tensor uniform_tensor(Shape shape, double bound) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = uniform(-bound, bound);
    t.set_requires_grad(true);
    return t;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

inline Tensor trainable(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

/// He-uniform weights (fan-in), zero bias.
inline Conv2dParams make_conv(Rng& rng, std::size_t c_out, std::size_t c_in, std::size_t kh, std::size_t kw,
                              Pair stride = {1, 1}, Pair dilation = {1, 1}, Pair padding = {0, 0}) {
  Conv2dParams p;
  const double fan_in = static_cast<double>(c_in * kh * kw);
  p.weight = rng.uniform_tensor({c_out, c_in, kh, kw}, std::sqrt(6.0 / fan_in));
  p.bias = trainable(Tensor::zeros({c_out}));
  p.stride = stride;
  p.dilation = dilation;
  p.padding = padding;
  return p;
}

/// Glorot-uniform weights, zero bias.
inline LinearParams make_linear(Rng& rng, std::size_t in, std::size_t out, bool bias = true) {
  LinearParams p;
  p.weight = rng.uniform_tensor({in, out}, std::sqrt(6.0 / static_cast<double>(in + out)));
  if (bias) p.bias = trainable(Tensor::zeros({out}));
  return p;
}

inline LayerNormParams make_layernorm(std::size_t features) {
  return {trainable(Tensor::ones({features})), trainable(Tensor::zeros({features})), 1e-5};
}

inline BatchNormParams make_batchnorm(std::size_t channels) {
  BatchNormParams p;
  p.gamma = trainable(Tensor::ones({channels}));
  p.beta = trainable(Tensor::zeros({channels}));
  p.running_mean = Tensor::zeros({channels});
  p.running_var = Tensor::ones({channels});
  return p;
}

inline void collect(NamedTensors& out, const std::string& prefix, const Conv2dParams& p) {
  out.push_back({prefix + ".weight", p.weight});
  if (p.bias.defined()) out.push_back({prefix + ".bias", p.bias});
}

inline void collect(NamedTensors& out, const std::string& prefix, const LinearParams& p) {
  out.push_back({prefix + ".weight", p.weight});
  if (p.bias.defined()) out.push_back({prefix + ".bias", p.bias});
}

inline void collect(NamedTensors& out, const std::string& prefix, const LayerNormParams& p) {
  out.push_back({prefix + ".gamma", p.gamma});
  out.push_back({prefix + ".beta", p.beta});
}

inline void collect(NamedTensors& out, const std::string& prefix, const BatchNormParams& p) {
  out.push_back({prefix + ".gamma", p.gamma});
  out.push_back({prefix + ".beta", p.beta});
}

inline void collect(NamedTensors& out, const std::string& prefix, const SeparablePair& p) {
  collect(out, prefix + ".horizontal", p.horizontal);
  collect(out, prefix + ".vertical", p.vertical);
}

inline std::size_t count(const NamedTensors& tensors) {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.tensor.size();
  return n;
}

}  // namespace odf
