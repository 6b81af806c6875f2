/**
 * @file tensor.hpp
 * @brief Dense double-precision tensors and a define-by-run autograd tape.
 *
 * A Tensor is a shared handle onto contiguous row-major storage. Operations
 * record a backward closure on the thread's active Tape (see TapeScope) when
 * any input requires a gradient; Tape::backward replays those closures in
 * reverse recording order.
 */
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "odformer/error.hpp"

namespace odf {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

class Tape;

namespace detail {

struct Storage {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // lazily sized
  bool requires_grad = false;
  // Set when the tensor was produced by a recorded op.
  const Tape* tape = nullptr;
  std::optional<std::size_t> node;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4)
    throw ShapeError("tensor rank must be in [1,4], got shape " + to_string(shape));
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : impl_(std::make_shared<detail::Storage>()) {
    detail::validate_shape(shape);
    impl_->value.assign(numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<detail::Storage>()) {
    detail::validate_shape(shape);
    if (values.size() != numel(shape))
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                       to_string(shape));
    impl_->shape = std::move(shape);
    impl_->value = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->value.size(); }

  std::span<double> data() { return impl_->value; }
  std::span<const double> data() const { return impl_->value; }
  double& operator[](std::size_t i) { return impl_->value[i]; }
  double operator[](std::size_t i) const { return impl_->value[i]; }

  /// Gradient buffer, allocated (zeroed) on first access.
  std::span<double> grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  std::span<const double> grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }
  bool has_grad() const { return impl_->grad.size() == impl_->value.size(); }

  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  bool is_leaf() const { return !impl_->node.has_value(); }
  std::optional<std::size_t> node() const { return impl_->node; }

  double item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor of shape " + to_string(shape()));
    return impl_->value[0];
  }

  /// Deep copy of values without autograd history.
  Tensor detach() const { return Tensor(shape(), impl_->value); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  std::shared_ptr<detail::Storage> storage() const { return impl_; }

 private:
  std::shared_ptr<detail::Storage> impl_;
};

/// Ordered record of differentiable ops; one per forward pass.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t record(std::string name, const Tensor& output, BackwardFn fn) {
    const std::size_t id = nodes_.size();
    auto st = output.storage();
    st->tape = this;
    st->node = id;
    nodes_.push_back(Node{std::move(name), st, std::move(fn)});
    return id;
  }

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).name; }

  void clear() {
    for (auto& n : nodes_) {
      n.output->tape = nullptr;
      n.output->node.reset();
    }
    nodes_.clear();
  }

  ~Tape() { clear(); }

  /// Fills d(root)/d(leaf) into every participating leaf's grad (accumulating).
  /// Intermediate grads are reset first, so repeated calls add exactly one
  /// more copy of the gradient to each leaf. If `visited` is given, node ids are
  /// appended in the order their backward rules run.
  void backward(const Tensor& root, std::vector<std::size_t>* visited = nullptr) {
    if (!root.defined() || root.size() != 1)
      throw ShapeError("backward() requires a scalar root");
    auto rs = root.storage();
    if (rs->tape != this || !rs->node)
      throw ShapeError("backward() root was not produced on this tape");
    for (auto& n : nodes_) {
      n.output->ensure_grad();
      std::fill(n.output->grad.begin(), n.output->grad.end(), 0.0);
    }
    rs->grad[0] = 1.0;
    for (std::size_t i = *rs->node + 1; i-- > 0;) {
      if (visited) visited->push_back(i);
      nodes_[i].backward();
    }
  }

 private:
  struct Node {
    std::string name;
    std::shared_ptr<detail::Storage> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

namespace detail {
inline thread_local Tape* active_tape = nullptr;
inline thread_local bool finite_guard = false;
}  // namespace detail

inline Tape* current_tape() { return detail::active_tape; }

/// Makes `tape` the recording target for ops on this thread until destroyed.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(detail::active_tape) { detail::active_tape = &tape; }
  ~TapeScope() { detail::active_tape = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording (inference); ops produce plain tensors.
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape) { detail::active_tape = nullptr; }
  ~NoGradScope() { detail::active_tape = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// While alive, every op output is checked for NaN/Inf.
class FiniteGuard {
 public:
  FiniteGuard() : previous_(detail::finite_guard) { detail::finite_guard = true; }
  ~FiniteGuard() { detail::finite_guard = previous_; }
  FiniteGuard(const FiniteGuard&) = delete;
  FiniteGuard& operator=(const FiniteGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

/// Common tail of every op: guard check, then record `fn` if gradients flow.
/// `fn` receives nothing; it captures the storages it needs.
inline void check_finite(const char* name, const Tensor& out) {
  if (!finite_guard) return;
  for (double v : out.data())
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + name);
}

template <class Fn>
Tensor finish(const char* name, Tensor out, std::initializer_list<const Tensor*> inputs, Fn&& fn) {
  check_finite(name, out);
  Tape* tape = active_tape;
  if (tape && any_requires_grad(inputs)) {
    out.set_requires_grad(true);
    tape->record(name, out, std::forward<Fn>(fn));
  }
  return out;
}

/// Grad buffer of `t` if it participates in backward, else an empty span.
inline std::span<double> grad_if(const std::shared_ptr<Storage>& s) {
  if (!s->requires_grad) return {};
  s->ensure_grad();
  return s->grad;
}

}  // namespace detail

}  // namespace odf
