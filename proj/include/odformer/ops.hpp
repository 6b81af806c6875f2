/**
 * @file ops.hpp
 * @brief Elementary differentiable tensor operations.
 *
 * Elementwise binary ops accept identical shapes, or a right operand that is
 * broadcast over the left operand's leading extent (its shape equals the
 * left shape without axis 0, or has extent 1 there).
 */
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "odformer/tensor.hpp"

namespace odf {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

inline std::size_t normalize_axis(long axis, std::size_t rank) {
  const long r = static_cast<long>(rank);
  const long a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

inline bool leading_broadcast(const Shape& a, const Shape& b) {
  if (a == b) return true;
  if (b.size() + 1 == a.size() && std::equal(b.begin(), b.end(), a.begin() + 1)) return true;
  if (b.size() == a.size() && b[0] == 1 && std::equal(b.begin() + 1, b.end(), a.begin() + 1)) return true;
  return false;
}

inline void check_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (!leading_broadcast(a.shape(), b.shape()))
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

/// out[i] = a[index[i]] with scatter-add backward; `index` is a bijection or
/// an injection into a.
inline Tensor gather(const char* name, const Tensor& a, Shape out_shape, std::vector<std::size_t> index) {
  Tensor out(std::move(out_shape));
  auto ov = out.data();
  const auto av = a.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[index[i]];
  auto as = a.storage(), os = out.storage();
  return finish(name, out, {&a}, [as, os, index = std::move(index)] {
    auto g = grad_if(as);
    for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += os->grad[i];
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_broadcast("add", a, b);
  Tensor out(a.shape());
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  const std::size_t nb = bv.size();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i % nb];
  auto as = a.storage(), bs = b.storage(), os = out.storage();
  return detail::finish("add", out, {&a, &b}, [as, bs, os] {
    const auto& g = os->grad;
    if (auto ga = detail::grad_if(as); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (auto gb = detail::grad_if(bs); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % gb.size()] += g[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_broadcast("sub", a, b);
  Tensor out(a.shape());
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  const std::size_t nb = bv.size();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i % nb];
  auto as = a.storage(), bs = b.storage(), os = out.storage();
  return detail::finish("sub", out, {&a, &b}, [as, bs, os] {
    const auto& g = os->grad;
    if (auto ga = detail::grad_if(as); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (auto gb = detail::grad_if(bs); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % gb.size()] -= g[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_broadcast("mul", a, b);
  Tensor out(a.shape());
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  const std::size_t nb = bv.size();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i % nb];
  auto as = a.storage(), bs = b.storage(), os = out.storage();
  return detail::finish("mul", out, {&a, &b}, [as, bs, os] {
    const auto& g = os->grad;
    const std::size_t nb = bs->value.size();
    if (auto ga = detail::grad_if(as); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bs->value[i % nb];
    if (auto gb = detail::grad_if(bs); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i] * as->value[i];
  });
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  const auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
  auto as = a.storage(), os = out.storage();
  return detail::finish("scale", out, {&a}, [as, os, s] {
    auto ga = detail::grad_if(as);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += os->grad[i] * s;
  });
}

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  auto as = a.storage(), os = out.storage();
  return detail::finish("sum", out, {&a}, [as, os] {
    auto ga = detail::grad_if(as);
    for (auto& g : ga) g += os->grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

/// Batched product over the trailing two extents. `b` either shares a's
/// leading extents or is rank 2 and applied to every leading slice.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul: operands need rank >= 2, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  const std::size_t ra = a.rank(), rb = b.rank();
  const std::size_t m = a.dim(ra - 2), k = a.dim(ra - 1);
  const std::size_t kb = b.dim(rb - 2), n = b.dim(rb - 1);
  const bool shared_b = rb == 2;
  const bool leading_ok =
      shared_b || (ra == rb && std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()));
  if (k != kb || !leading_ok)
    throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const std::size_t batch = a.size() / (m * k);

  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  Tensor out(out_shape);
  {
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    double* op = out.data().data();
    for (std::size_t i = 0; i < batch; ++i) {
      detail::ConstMatMap A(ap + i * m * k, m, k);
      detail::ConstMatMap B(bp + (shared_b ? 0 : i * k * n), k, n);
      detail::MatMap O(op + i * m * n, m, n);
      O.noalias() = A * B;
    }
  }
  auto as = a.storage(), bs = b.storage(), os = out.storage();
  return detail::finish("matmul", out, {&a, &b}, [as, bs, os, batch, m, k, n, shared_b] {
    auto ga = detail::grad_if(as);
    auto gb = detail::grad_if(bs);
    for (std::size_t i = 0; i < batch; ++i) {
      detail::ConstMatMap G(os->grad.data() + i * m * n, m, n);
      detail::ConstMatMap A(as->value.data() + i * m * k, m, k);
      detail::ConstMatMap B(bs->value.data() + (shared_b ? 0 : i * k * n), k, n);
      if (!ga.empty()) {
        detail::MatMap GA(ga.data() + i * m * k, m, k);
        GA.noalias() += G * B.transpose();
      }
      if (!gb.empty()) {
        detail::MatMap GB(gb.data() + (shared_b ? 0 : i * k * n), k, n);
        GB.noalias() += A.transpose() * G;
      }
    }
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, long axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = detail::normalize_axis(axis, s0.size());
  Shape out_shape = s0;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == ax || s[d] == s0[d];
    if (!ok) throw ShapeError("concat: shape mismatch " + to_string(s0) + " vs " + to_string(s));
    out_shape[ax] += s[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= s0[d];
  for (std::size_t d = ax + 1; d < s0.size(); ++d) inner *= s0[d];
  const std::size_t out_block = out_shape[ax] * inner;

  Tensor out(out_shape);
  std::vector<std::shared_ptr<detail::Storage>> stores;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t block = p.dim(ax) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().begin() + o * block, block, out.data().begin() + o * out_block + offset);
    stores.push_back(p.storage());
    offsets.push_back(offset);
    offset += block;
  }
  auto os = out.storage();
  bool needs = false;
  for (const auto& p : parts) needs = needs || p.requires_grad();
  Tape* tape = detail::active_tape;
  detail::check_finite("concat", out);
  if (tape && needs) {
    out.set_requires_grad(true);
    tape->record("concat", out, [stores, offsets, os, outer, out_block, inner, ax] {
      for (std::size_t j = 0; j < stores.size(); ++j) {
        auto g = detail::grad_if(stores[j]);
        if (g.empty()) continue;
        const std::size_t block = stores[j]->shape[ax] * inner;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t t = 0; t < block; ++t) g[o * block + t] += os->grad[o * out_block + offsets[j] + t];
      }
    });
  }
  return out;
}

inline Tensor slice(const Tensor& a, long axis, std::size_t start, std::size_t length) {
  const std::size_t ax = detail::normalize_axis(axis, a.rank());
  if (length == 0 || start + length > a.dim(ax))
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                     ") out of bounds for axis " + std::to_string(ax) + " of " + to_string(a.shape()));
  Shape out_shape = a.shape();
  out_shape[ax] = length;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= a.dim(d);
  for (std::size_t d = ax + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const std::size_t in_block = a.dim(ax) * inner, out_block = length * inner, off = start * inner;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.data().begin() + o * in_block + off, out_block, out.data().begin() + o * out_block);
  auto as = a.storage(), os = out.storage();
  return detail::finish("slice", out, {&a}, [as, os, outer, in_block, out_block, off] {
    auto g = detail::grad_if(as);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t t = 0; t < out_block; ++t) g[o * in_block + off + t] += os->grad[o * out_block + t];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  detail::validate_shape(shape);
  if (numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  auto as = a.storage(), os = out.storage();
  return detail::finish("reshape", out, {&a}, [as, os] {
    auto g = detail::grad_if(as);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += os->grad[i];
  });
}

/// Reorders axes: output axis i is input axis perm[i].
inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  const std::size_t r = a.rank();
  if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch");
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.dim(perm[i]);
  // Input strides, expressed in output axis order.
  std::array<std::size_t, 4> in_stride{}, strides_by_out{}, ext{1, 1, 1, 1};
  {
    std::size_t s = 1;
    for (std::size_t d = r; d-- > 0;) {
      in_stride[d] = s;
      s *= a.dim(d);
    }
  }
  // Pad to rank 4 on the left.
  const std::size_t pad = 4 - r;
  for (std::size_t i = 0; i < r; ++i) {
    ext[pad + i] = out_shape[i];
    strides_by_out[pad + i] = in_stride[perm[i]];
  }
  std::vector<std::size_t> index(a.size());
  std::size_t o = 0;
  for (std::size_t i0 = 0; i0 < ext[0]; ++i0)
    for (std::size_t i1 = 0; i1 < ext[1]; ++i1)
      for (std::size_t i2 = 0; i2 < ext[2]; ++i2)
        for (std::size_t i3 = 0; i3 < ext[3]; ++i3)
          index[o++] = i0 * strides_by_out[0] + i1 * strides_by_out[1] + i2 * strides_by_out[2] +
                       i3 * strides_by_out[3];
  return detail::gather("permute", a, std::move(out_shape), std::move(index));
}

inline Tensor transpose(const Tensor& a, long axis0, long axis1) {
  const std::size_t x = detail::normalize_axis(axis0, a.rank());
  const std::size_t y = detail::normalize_axis(axis1, a.rank());
  std::vector<std::size_t> perm(a.rank());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[x], perm[y]);
  return permute(a, perm);
}

}  // namespace odf
