#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Finite-value checks after every forward op. On by default in debug builds.
#ifndef CARPE_FINITE_CHECKS
#ifdef NDEBUG
#define CARPE_FINITE_CHECKS 0
#else
#define CARPE_FINITE_CHECKS 1
#endif
#endif

namespace carpe {

// Extents of a dense row-major tensor. Rank stays small (<= 4) in this project.
using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int extent : shape) {
    if (extent < 0) {
      throw std::invalid_argument("tensor extent must be non-negative");
    }
    n *= static_cast<std::size_t>(extent);
  }
  return n;
}

inline std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) {
      os << 'x';
    }
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

template <class S>
struct TensorStorage {
  Shape shape;
  std::vector<S> values;
  std::vector<S> grad;  // same length as values once requires_grad is set
  bool requires_grad = false;
};

}  // namespace detail

// Dense row-major tensor with optional gradient tracking. A Tensor is a cheap
// handle onto shared storage: copies alias the same buffer. Values are treated
// as immutable once an op has consumed them; grad buffers are the only state
// mutated afterwards (by Tape::backward).
//
// The scalar type S selects the working precision: float for training and
// inference, double for gradient-check mode.
template <class S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : d_(std::make_shared<detail::TensorStorage<S>>()) {
    d_->shape = std::move(shape);
    d_->values.assign(shape_numel(d_->shape), S(0));
  }

  Tensor(Shape shape, std::vector<S> values) : d_(std::make_shared<detail::TensorStorage<S>>()) {
    d_->shape = std::move(shape);
    if (values.size() != shape_numel(d_->shape)) {
      throw std::invalid_argument("tensor value count " + std::to_string(values.size()) +
                                  " does not match shape " + shape_to_string(d_->shape));
    }
    d_->values = std::move(values);
  }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  static Tensor full(Shape shape, S v) {
    Tensor t(std::move(shape));
    for (S& x : t.values()) {
      x = v;
    }
    return t;
  }

  bool defined() const noexcept { return static_cast<bool>(d_); }

  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int extent(int axis) const { return d_->shape.at(static_cast<std::size_t>(axis)); }
  std::size_t numel() const { return d_->values.size(); }

  std::span<S> values() { return {d_->values.data(), d_->values.size()}; }
  std::span<const S> values() const { return {d_->values.data(), d_->values.size()}; }

  S item() const {
    if (numel() != 1) {
      throw std::logic_error("item() requires a single-element tensor, got " + shape_to_string(d_->shape));
    }
    return d_->values[0];
  }

  bool requires_grad() const { return d_ && d_->requires_grad; }

  void set_requires_grad(bool on) {
    if (on) {
      d_->requires_grad = true;
      if (d_->grad.size() != d_->values.size()) {
        d_->grad.assign(d_->values.size(), S(0));
      }
    } else {
      d_->requires_grad = false;
      d_->grad.clear();
    }
  }

  std::span<S> grad() {
    require_grad_buffer();
    return {d_->grad.data(), d_->grad.size()};
  }
  std::span<const S> grad() const {
    require_grad_buffer();
    return {d_->grad.data(), d_->grad.size()};
  }

  void zero_grad() {
    if (d_ && d_->requires_grad) {
      d_->grad.assign(d_->values.size(), S(0));
    }
  }

  // Deep copy of values (grad state is not cloned).
  Tensor clone() const { return Tensor(d_->shape, d_->values); }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

 private:
  void require_grad_buffer() const {
    if (!d_ || !d_->requires_grad) {
      throw std::logic_error("tensor has no gradient buffer (requires_grad is off)");
    }
  }

  std::shared_ptr<detail::TensorStorage<S>> d_;
};

// Reverse-mode tape. Each op appends one backward step during the forward
// pass; backward() replays the steps newest-first, a valid reverse topological
// order because an op is always recorded after the ops producing its inputs,
// and each step runs exactly once. A tape serves one forward pass: clear() (or
// discard the tape) before recording the next one.
template <class S>
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  std::size_t size() const noexcept { return steps_.size(); }
  void clear() noexcept { steps_.clear(); }

  // Seeds d(loss)/d(loss) = seed and accumulates gradients into every tracked
  // tensor reachable from loss. A constant loss (nothing requires grad) is a
  // no-op. Non-scalar losses violate the contract.
  void backward(Tensor<S>& loss, S seed = S(1)) {
    if (loss.numel() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got " + shape_to_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
      return;
    }
    loss.grad()[0] += seed;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      (*it)();
    }
  }

 private:
  std::vector<std::function<void()>> steps_;
};

namespace detail {

template <class S>
inline void check_finite(const Tensor<S>& t, const char* op) {
#if CARPE_FINITE_CHECKS
  for (S v : t.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw std::runtime_error(std::string(op) + ": non-finite value in output");
    }
  }
#else
  (void)t;
  (void)op;
#endif
}

}  // namespace detail

}  // namespace carpe
