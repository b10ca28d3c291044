#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "carpe/tensor.hpp"

// Differentiable ops. Every op validates shapes, computes the forward result,
// and, when given a tape and at least one input tracks gradients, records a
// backward step that accumulates (never overwrites) into input grad buffers.
// Passing tape = nullptr runs pure inference with no tracking.
//
// Tensors are shared handles, so ops take them by value: the copy is two
// pointers, and the backward closure keeps the storage alive through the same
// handle it captured.

namespace carpe {

// Keeps the tape parameter out of template deduction so call sites may pass a
// plain nullptr.
template <class S>
using TapePtr = std::type_identity_t<Tape<S>*>;

namespace detail {

template <class S>
inline bool track(const Tape<S>* tape, std::initializer_list<const Tensor<S>*> inputs) {
  if (tape == nullptr) {
    return false;
  }
  for (const Tensor<S>* t : inputs) {
    if (t->requires_grad()) {
      return true;
    }
  }
  return false;
}

}  // namespace detail

// Fully-connected layer: out[n, o] = sum_i x[n, i] * w[o, i] + b[o].
// x is [N, in], w is [out, in] row-major, b is [out].
template <class S>
Tensor<S> linear(Tensor<S> x, Tensor<S> w, Tensor<S> b, TapePtr<S> tape = nullptr) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.extent(1) != w.extent(1) ||
      w.extent(0) != b.extent(0)) {
    throw std::invalid_argument("linear: incompatible shapes x" + shape_to_string(x.shape()) + " w" +
                                shape_to_string(w.shape()) + " b" + shape_to_string(b.shape()));
  }
  const int rows = x.extent(0);
  const int in_dim = x.extent(1);
  const int out_dim = w.extent(0);
  Tensor<S> out({rows, out_dim});
  {
    auto xv = x.values();
    auto wv = w.values();
    auto bv = b.values();
    auto ov = out.values();
    for (int n = 0; n < rows; ++n) {
      for (int o = 0; o < out_dim; ++o) {
        S acc = S(0);
        const std::size_t xoff = static_cast<std::size_t>(n) * in_dim;
        const std::size_t woff = static_cast<std::size_t>(o) * in_dim;
        for (int i = 0; i < in_dim; ++i) {
          acc += xv[xoff + i] * wv[woff + i];
        }
        ov[static_cast<std::size_t>(n) * out_dim + o] = acc + bv[o];
      }
    }
  }
  detail::check_finite(out, "linear");
  if (detail::track(tape, {&x, &w, &b})) {
    out.set_requires_grad(true);
    tape->record([x, w, b, out]() mutable {
      auto g = out.grad();
      auto xv = x.values();
      auto wv = w.values();
      const int rows = x.extent(0);
      const int in_dim = x.extent(1);
      const int out_dim = w.extent(0);
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (int n = 0; n < rows; ++n) {
          for (int o = 0; o < out_dim; ++o) {
            const S go = g[static_cast<std::size_t>(n) * out_dim + o];
            for (int i = 0; i < in_dim; ++i) {
              gx[static_cast<std::size_t>(n) * in_dim + i] += go * wv[static_cast<std::size_t>(o) * in_dim + i];
            }
          }
        }
      }
      if (w.requires_grad()) {
        auto gw = w.grad();
        for (int n = 0; n < rows; ++n) {
          for (int o = 0; o < out_dim; ++o) {
            const S go = g[static_cast<std::size_t>(n) * out_dim + o];
            for (int i = 0; i < in_dim; ++i) {
              gw[static_cast<std::size_t>(o) * in_dim + i] += go * xv[static_cast<std::size_t>(n) * in_dim + i];
            }
          }
        }
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (int n = 0; n < rows; ++n) {
          for (int o = 0; o < out_dim; ++o) {
            gb[o] += g[static_cast<std::size_t>(n) * out_dim + o];
          }
        }
      }
    });
  }
  return out;
}

// 2-D cross-correlation with valid padding. x is [Cin, H, W], kernel is
// [Cout, Cin, kh, kw], bias is [Cout]; output is [Cout, OH, OW] with
// OH = (H - kh) / sh + 1 and OW = (W - kw) / sw + 1. Each output element is a
// single accumulator summed in (cin, ky, kx) order, bias added last.
template <class S>
Tensor<S> conv2d(Tensor<S> x, Tensor<S> kernel, Tensor<S> bias, int stride_h, int stride_w,
                 TapePtr<S> tape = nullptr) {
  if (x.rank() != 3 || kernel.rank() != 4 || bias.rank() != 1) {
    throw std::invalid_argument("conv2d: expected x rank 3, kernel rank 4, bias rank 1");
  }
  if (kernel.extent(1) != x.extent(0) || bias.extent(0) != kernel.extent(0)) {
    throw std::invalid_argument("conv2d: channel mismatch x" + shape_to_string(x.shape()) + " kernel" +
                                shape_to_string(kernel.shape()));
  }
  if (stride_h < 1 || stride_w < 1) {
    throw std::invalid_argument("conv2d: strides must be >= 1");
  }
  const int cin = x.extent(0);
  const int h = x.extent(1);
  const int w = x.extent(2);
  const int cout = kernel.extent(0);
  const int kh = kernel.extent(2);
  const int kw = kernel.extent(3);
  if (kh > h || kw > w) {
    throw std::invalid_argument("conv2d: kernel " + shape_to_string({kh, kw}) + " exceeds input " +
                                shape_to_string({h, w}));
  }
  const int oh = (h - kh) / stride_h + 1;
  const int ow = (w - kw) / stride_w + 1;
  Tensor<S> out({cout, oh, ow});
  {
    auto xv = x.values();
    auto kv = kernel.values();
    auto bv = bias.values();
    auto ov = out.values();
    for (int oc = 0; oc < cout; ++oc) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          S acc = S(0);
          for (int ic = 0; ic < cin; ++ic) {
            for (int ky = 0; ky < kh; ++ky) {
              const std::size_t xrow = (static_cast<std::size_t>(ic) * h + (oy * stride_h + ky)) * w;
              const std::size_t krow = ((static_cast<std::size_t>(oc) * cin + ic) * kh + ky) * kw;
              for (int kx = 0; kx < kw; ++kx) {
                acc += xv[xrow + (ox * stride_w + kx)] * kv[krow + kx];
              }
            }
          }
          ov[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox] = acc + bv[oc];
        }
      }
    }
  }
  detail::check_finite(out, "conv2d");
  if (detail::track(tape, {&x, &kernel, &bias})) {
    out.set_requires_grad(true);
    tape->record([x, kernel, bias, out, stride_h, stride_w]() mutable {
      auto g = out.grad();
      auto xv = x.values();
      auto kv = kernel.values();
      const int cin = x.extent(0);
      const int h = x.extent(1);
      const int w = x.extent(2);
      const int cout = kernel.extent(0);
      const int kh = kernel.extent(2);
      const int kw = kernel.extent(3);
      const int oh = out.extent(1);
      const int ow = out.extent(2);
      const bool need_x = x.requires_grad();
      const bool need_k = kernel.requires_grad();
      if (need_x || need_k) {
        for (int oc = 0; oc < cout; ++oc) {
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const S go = g[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
              for (int ic = 0; ic < cin; ++ic) {
                for (int ky = 0; ky < kh; ++ky) {
                  const std::size_t xrow = (static_cast<std::size_t>(ic) * h + (oy * stride_h + ky)) * w;
                  const std::size_t krow = ((static_cast<std::size_t>(oc) * cin + ic) * kh + ky) * kw;
                  for (int kx = 0; kx < kw; ++kx) {
                    if (need_x) {
                      x.grad()[xrow + (ox * stride_w + kx)] += go * kv[krow + kx];
                    }
                    if (need_k) {
                      kernel.grad()[krow + kx] += go * xv[xrow + (ox * stride_w + kx)];
                    }
                  }
                }
              }
            }
          }
        }
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (int oc = 0; oc < cout; ++oc) {
          for (int i = 0; i < oh * ow; ++i) {
            gb[oc] += g[static_cast<std::size_t>(oc) * oh * ow + i];
          }
        }
      }
    });
  }
  return out;
}

// Elementwise max(0, x). The subgradient at exactly 0 is taken as 0.
template <class S>
Tensor<S> relu(Tensor<S> x, TapePtr<S> tape = nullptr) {
  Tensor<S> out(x.shape());
  {
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      ov[i] = xv[i] > S(0) ? xv[i] : S(0);
    }
  }
  if (detail::track(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable {
      auto g = out.grad();
      auto xv = x.values();
      auto gx = x.grad();
      for (std::size_t i = 0; i < xv.size(); ++i) {
        if (xv[i] > S(0)) {
          gx[i] += g[i];
        }
      }
    });
  }
  return out;
}

// Mean squared error over all elements, returned as a single-element tensor.
template <class S>
Tensor<S> mse_loss(Tensor<S> pred, Tensor<S> target, TapePtr<S> tape = nullptr) {
  if (pred.shape() != target.shape()) {
    throw std::invalid_argument("mse_loss: shape mismatch " + shape_to_string(pred.shape()) + " vs " +
                                shape_to_string(target.shape()));
  }
  if (pred.numel() == 0) {
    throw std::invalid_argument("mse_loss: empty tensors");
  }
  const std::size_t n = pred.numel();
  S acc = S(0);
  {
    auto pv = pred.values();
    auto tv = target.values();
    for (std::size_t i = 0; i < n; ++i) {
      const S d = pv[i] - tv[i];
      acc += d * d;
    }
  }
  Tensor<S> out = Tensor<S>::scalar(acc / static_cast<S>(n));
  detail::check_finite(out, "mse_loss");
  if (detail::track(tape, {&pred, &target})) {
    out.set_requires_grad(true);
    tape->record([pred, target, out, n]() mutable {
      const S coef = S(2) / static_cast<S>(n) * out.grad()[0];
      auto pv = pred.values();
      auto tv = target.values();
      if (pred.requires_grad()) {
        auto gp = pred.grad();
        for (std::size_t i = 0; i < n; ++i) {
          gp[i] += coef * (pv[i] - tv[i]);
        }
      }
      if (target.requires_grad()) {
        auto gt = target.grad();
        for (std::size_t i = 0; i < n; ++i) {
          gt[i] -= coef * (pv[i] - tv[i]);
        }
      }
    });
  }
  return out;
}

// Elementwise sum of two same-shape tensors.
template <class S>
Tensor<S> add(Tensor<S> a, Tensor<S> b, TapePtr<S> tape = nullptr) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
  Tensor<S> out(a.shape());
  {
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
      ov[i] = av[i] + bv[i];
    }
  }
  detail::check_finite(out, "add");
  if (detail::track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
        }
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          gb[i] += g[i];
        }
      }
    });
  }
  return out;
}

// Elementwise x + c for a plain constant c (no gradient flows into c).
template <class S>
Tensor<S> add_const(Tensor<S> x, S c, TapePtr<S> tape = nullptr) {
  Tensor<S> out(x.shape());
  {
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
      ov[i] = xv[i] + c;
    }
  }
  detail::check_finite(out, "add_const");
  if (detail::track(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[i] += g[i];
      }
    });
  }
  return out;
}

// Multiplies every element of x by a single-element tensor alpha. Gradient
// flows into both x and alpha.
template <class S>
Tensor<S> scale(Tensor<S> x, Tensor<S> alpha, TapePtr<S> tape = nullptr) {
  if (alpha.numel() != 1) {
    throw std::invalid_argument("scale: alpha must be a single-element tensor, got " +
                                shape_to_string(alpha.shape()));
  }
  const S a = alpha.values()[0];
  Tensor<S> out(x.shape());
  {
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
      ov[i] = a * xv[i];
    }
  }
  detail::check_finite(out, "scale");
  if (detail::track(tape, {&x, &alpha})) {
    out.set_requires_grad(true);
    tape->record([x, alpha, out, a]() mutable {
      auto g = out.grad();
      auto xv = x.values();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          gx[i] += a * g[i];
        }
      }
      if (alpha.requires_grad()) {
        S acc = S(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          acc += xv[i] * g[i];
        }
        alpha.grad()[0] += acc;
      }
    });
  }
  return out;
}

// Concatenates two rank-1 tensors.
template <class S>
Tensor<S> concat(Tensor<S> a, Tensor<S> b, TapePtr<S> tape = nullptr) {
  if (a.rank() != 1 || b.rank() != 1) {
    throw std::invalid_argument("concat: expected rank-1 tensors, got " + shape_to_string(a.shape()) +
                                " and " + shape_to_string(b.shape()));
  }
  const int na = a.extent(0);
  const int nb = b.extent(0);
  Tensor<S> out({na + nb});
  {
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values();
    std::copy(av.begin(), av.end(), ov.begin());
    std::copy(bv.begin(), bv.end(), ov.begin() + na);
  }
  if (detail::track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, na]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) {
          ga[i] += g[i];
        }
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gb.size(); ++i) {
          gb[i] += g[static_cast<std::size_t>(na) + i];
        }
      }
    });
  }
  return out;
}

// Concatenates two rank-2 tensors along columns: [N, a] ++ [N, b] -> [N, a+b].
template <class S>
Tensor<S> concat_cols(Tensor<S> a, Tensor<S> b, TapePtr<S> tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(0) != b.extent(0)) {
    throw std::invalid_argument("concat_cols: expected rank-2 tensors with equal row count, got " +
                                shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  const int rows = a.extent(0);
  const int ca = a.extent(1);
  const int cb = b.extent(1);
  Tensor<S> out({rows, ca + cb});
  {
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values();
    for (int n = 0; n < rows; ++n) {
      std::copy_n(av.begin() + static_cast<std::size_t>(n) * ca, ca,
                  ov.begin() + static_cast<std::size_t>(n) * (ca + cb));
      std::copy_n(bv.begin() + static_cast<std::size_t>(n) * cb, cb,
                  ov.begin() + static_cast<std::size_t>(n) * (ca + cb) + ca);
    }
  }
  if (detail::track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, rows, ca, cb]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (int n = 0; n < rows; ++n) {
          for (int i = 0; i < ca; ++i) {
            ga[static_cast<std::size_t>(n) * ca + i] += g[static_cast<std::size_t>(n) * (ca + cb) + i];
          }
        }
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (int n = 0; n < rows; ++n) {
          for (int i = 0; i < cb; ++i) {
            gb[static_cast<std::size_t>(n) * cb + i] += g[static_cast<std::size_t>(n) * (ca + cb) + ca + i];
          }
        }
      }
    });
  }
  return out;
}

// Reinterprets x with a new shape of the same element count. The result is a
// fresh tensor (no aliasing); gradients pass straight through.
template <class S>
Tensor<S> reshape(Tensor<S> x, Shape shape, TapePtr<S> tape = nullptr) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                                shape_to_string(shape));
  }
  Tensor<S> out(std::move(shape), std::vector<S>(x.values().begin(), x.values().end()));
  if (detail::track(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[i] += g[i];
      }
    });
  }
  return out;
}

// Stacks K same-shape tensors into a [K, ...] tensor.
template <class S>
Tensor<S> stack(std::vector<Tensor<S>> items, TapePtr<S> tape = nullptr) {
  if (items.empty()) {
    throw std::invalid_argument("stack: no tensors given");
  }
  const Shape& base = items.front().shape();
  for (const Tensor<S>& t : items) {
    if (t.shape() != base) {
      throw std::invalid_argument("stack: mixed shapes " + shape_to_string(base) + " and " +
                                  shape_to_string(t.shape()));
    }
  }
  Shape out_shape;
  out_shape.reserve(base.size() + 1);
  out_shape.push_back(static_cast<int>(items.size()));
  out_shape.insert(out_shape.end(), base.begin(), base.end());
  Tensor<S> out(std::move(out_shape));
  const std::size_t step = items.front().numel();
  {
    auto ov = out.values();
    for (std::size_t k = 0; k < items.size(); ++k) {
      auto iv = items[k].values();
      std::copy(iv.begin(), iv.end(), ov.begin() + k * step);
    }
  }
  bool any_grad = false;
  for (const Tensor<S>& t : items) {
    any_grad = any_grad || t.requires_grad();
  }
  if (tape != nullptr && any_grad) {
    out.set_requires_grad(true);
    tape->record([items, out, step]() mutable {
      auto g = out.grad();
      for (std::size_t k = 0; k < items.size(); ++k) {
        if (!items[k].requires_grad()) {
          continue;
        }
        auto gi = items[k].grad();
        for (std::size_t i = 0; i < step; ++i) {
          gi[i] += g[k * step + i];
        }
      }
    });
  }
  return out;
}

// Copies row i of a rank-2 tensor into a rank-1 tensor.
template <class S>
Tensor<S> select_row(Tensor<S> x, int row, TapePtr<S> tape = nullptr) {
  if (x.rank() != 2) {
    throw std::invalid_argument("select_row: expected rank-2 tensor, got " + shape_to_string(x.shape()));
  }
  if (row < 0 || row >= x.extent(0)) {
    throw std::out_of_range("select_row: row " + std::to_string(row) + " out of " +
                            std::to_string(x.extent(0)));
  }
  const int cols = x.extent(1);
  Tensor<S> out({cols});
  {
    auto xv = x.values();
    auto ov = out.values();
    std::copy_n(xv.begin() + static_cast<std::size_t>(row) * cols, cols, ov.begin());
  }
  if (detail::track(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, row, cols]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (int i = 0; i < cols; ++i) {
        gx[static_cast<std::size_t>(row) * cols + i] += g[i];
      }
    });
  }
  return out;
}

// Column sums of a rank-2 tensor: [N, D] -> [D], rows added in index order.
template <class S>
Tensor<S> sum_rows(Tensor<S> x, TapePtr<S> tape = nullptr) {
  if (x.rank() != 2) {
    throw std::invalid_argument("sum_rows: expected rank-2 tensor, got " + shape_to_string(x.shape()));
  }
  const int rows = x.extent(0);
  const int cols = x.extent(1);
  Tensor<S> out({cols});
  {
    auto xv = x.values();
    auto ov = out.values();
    for (int n = 0; n < rows; ++n) {
      for (int d = 0; d < cols; ++d) {
        ov[d] += xv[static_cast<std::size_t>(n) * cols + d];
      }
    }
  }
  detail::check_finite(out, "sum_rows");
  if (detail::track(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, rows, cols]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (int n = 0; n < rows; ++n) {
        for (int d = 0; d < cols; ++d) {
          gx[static_cast<std::size_t>(n) * cols + d] += g[d];
        }
      }
    });
  }
  return out;
}

// Sum of all elements as a single-element tensor.
template <class S>
Tensor<S> sum_all(Tensor<S> x, TapePtr<S> tape = nullptr) {
  S acc = S(0);
  for (S v : x.values()) {
    acc += v;
  }
  Tensor<S> out = Tensor<S>::scalar(acc);
  detail::check_finite(out, "sum_all");
  if (detail::track(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable {
      const S g = out.grad()[0];
      auto gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] += g;
      }
    });
  }
  return out;
}

}  // namespace carpe
