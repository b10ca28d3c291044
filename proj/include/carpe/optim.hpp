#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "carpe/tensor.hpp"

namespace carpe {

// Global L2 norm over the gradients of all params, accumulated in double for
// accuracy, then every gradient scaled by max_norm / norm when the norm
// exceeds max_norm. Returns the factor applied (1 when no clipping happened).
// A small relative guard keeps the operation idempotent: a norm already at
// max_norm up to rounding is left untouched.
template <class S>
S clip_global_norm(std::span<Tensor<S>> params, S max_norm) {
  if (max_norm <= S(0)) {
    throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  }
  double sq = 0.0;
  for (Tensor<S>& p : params) {
    for (S g : p.grad()) {
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  const double norm = std::sqrt(sq);
  const double guard = 1.0 + 8.0 * static_cast<double>(std::numeric_limits<S>::epsilon());
  if (norm <= static_cast<double>(max_norm) * guard) {
    return S(1);
  }
  const S factor = static_cast<S>(static_cast<double>(max_norm) / norm);
  for (Tensor<S>& p : params) {
    for (S& g : p.grad()) {
      g *= factor;
    }
  }
  return factor;
}

// Per-parameter Adam moment buffers, laid out in the same order as the param
// list handed to the constructor. One state instance per training run.
template <class S>
struct AdamState {
  S lr;
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
  long step_count = 0;
  std::vector<std::vector<S>> m;
  std::vector<std::vector<S>> v;

  AdamState(std::span<const Tensor<S>> params, S lr_in) : lr(lr_in) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Tensor<S>& p : params) {
      m.emplace_back(p.numel(), S(0));
      v.emplace_back(p.numel(), S(0));
    }
  }
};

// One Adam update with bias correction. Every param must carry a gradient
// buffer; a missing one is a contract violation, not a silent skip.
template <class S>
void adam_step(std::span<Tensor<S>> params, AdamState<S>& state) {
  if (params.size() != state.m.size()) {
    throw std::logic_error("adam_step: param list does not match optimizer state");
  }
  state.step_count += 1;
  const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(state.beta1), state.step_count));
  const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(state.beta2), state.step_count));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<S>& p = params[k];
    if (!p.requires_grad()) {
      throw std::logic_error("adam_step: parameter without gradient buffer");
    }
    auto values = p.values();
    auto grads = p.grad();
    std::vector<S>& m = state.m[k];
    std::vector<S>& v = state.v[k];
    if (m.size() != values.size()) {
      throw std::logic_error("adam_step: parameter size changed since state construction");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const S g = grads[i];
      m[i] = state.beta1 * m[i] + (S(1) - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (S(1) - state.beta2) * g * g;
      const S m_hat = m[i] / bc1;
      const S v_hat = v[i] / bc2;
      values[i] -= state.lr * m_hat / (static_cast<S>(std::sqrt(static_cast<double>(v_hat))) + state.eps);
    }
  }
}

}  // namespace carpe
