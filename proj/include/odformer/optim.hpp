#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "odformer/tensor.hpp"

namespace odf {

/// Classic momentum: v <- momentum*v + grad; p <- p - lr*v.
inline void sgd_step(std::span<Tensor> params, double lr, double momentum, std::span<Tensor> velocity) {
  if (params.size() != velocity.size())
    throw ShapeError("sgd_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(velocity.size()) + " velocity buffers");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Tensor& v = velocity[i];
    if (p.shape() != v.shape())
      throw ShapeError("sgd_step: parameter " + to_string(p.shape()) + " vs velocity " + to_string(v.shape()));
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto pv = p.data();
    auto vv = v.data();
    for (std::size_t k = 0; k < pv.size(); ++k) {
      vv[k] = momentum * vv[k] + g[k];
      pv[k] -= lr * vv[k];
    }
  }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before rescaling.
inline double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params)
    if (p.has_grad())
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (auto& g : p.grad()) g *= f;
  }
  return norm;
}

class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double lr, double momentum)
      : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    velocity_.reserve(params_.size());
    for (const auto& p : params_) velocity_.push_back(Tensor::zeros(p.shape()));
  }

  void step() { sgd_step(params_, lr_, momentum_, velocity_); }
  double clip(double max_norm) { return clip_grad_norm(params_, max_norm); }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  double momentum() const { return momentum_; }
  const std::vector<Tensor>& velocity() const { return velocity_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Tensor> velocity_;
  double lr_;
  double momentum_;
};

}  // namespace odf
