#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "odformer/netpbm.hpp"
#include "odformer/tensor.hpp"

namespace odf {

/// Mean pixel cross-entropy of logits (N,K,H,W) against class ids laid out
/// (N,H,W) row-major. Softmax and log are fused with max subtraction.
inline Tensor cross_entropy_loss(const Tensor& logits, const std::vector<std::uint8_t>& target) {
  if (logits.rank() != 4) throw ShapeError("cross_entropy: logits must be (N,K,H,W), got " + to_string(logits.shape()));
  const std::size_t N = logits.dim(0), K = logits.dim(1), P = logits.dim(2) * logits.dim(3);
  if (target.size() != N * P)
    throw ShapeError("cross_entropy: " + std::to_string(target.size()) + " target ids for logits " +
                     to_string(logits.shape()));
  for (auto t : target)
    if (t >= K) throw ShapeError("cross_entropy: target id " + std::to_string(t) + " >= K=" + std::to_string(K));
  const auto x = logits.data();
  // Softmax probabilities are kept for the backward pass.
  auto prob = std::make_shared<std::vector<double>>(logits.size());
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < P; ++p) {
      const std::size_t base = n * K * P + p;
      std::size_t arg = 0;
      for (std::size_t k = 1; k < K; ++k)
        if (x[base + k * P] > x[base + arg * P]) arg = k;
      const double mx = x[base + arg * P];
      // rest = z - 1, so log z = log1p(rest) keeps tiny losses exact.
      double rest = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double e = k == arg ? 1.0 : std::exp(x[base + k * P] - mx);
        (*prob)[base + k * P] = e;
        if (k != arg) rest += e;
      }
      const double z = 1.0 + rest;
      for (std::size_t k = 0; k < K; ++k) (*prob)[base + k * P] /= z;
      const std::size_t t = target[n * P + p];
      total += std::log1p(rest) - (x[base + t * P] - mx);
    }
  const double inv = 1.0 / static_cast<double>(N * P);
  Tensor out = Tensor::scalar(total * inv);
  auto ls = logits.storage(), os = out.storage();
  return detail::finish("cross_entropy", out, {&logits}, [ls, os, prob, target, N, K, P, inv] {
    auto g = detail::grad_if(ls);
    const double up = os->grad[0] * inv;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t base = n * K * P + p;
        const std::size_t t = target[n * P + p];
        for (std::size_t k = 0; k < K; ++k)
          g[base + k * P] += up * ((*prob)[base + k * P] - (k == t ? 1.0 : 0.0));
      }
  });
}

/// Targets from a batch of masks, in batch order.
inline std::vector<std::uint8_t> stack_targets(const std::vector<const Mask*>& masks) {
  std::vector<std::uint8_t> out;
  for (const Mask* m : masks) out.insert(out.end(), m->ids.begin(), m->ids.end());
  return out;
}

}  // namespace odf
