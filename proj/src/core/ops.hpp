// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable forward ops. Every op validates shapes, computes its output,
// rejects non-finite results, and (when any input requires grad and the tape
// is recording) registers a closure that accumulates input gradients.
//
// Batched layouts: sequences are [N, C, T], images are [N, C, H, W]. The
// rank-2 forms [C, T] accepted by conv1d / group_norm / instance_norm /
// mean_pool are treated as a batch of one.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "core/gemm.hpp"
#include "core/tensor.hpp"

namespace locoalign::ad {

namespace detail {

template <typename T>
Tensor<T> emit(Shape shape, std::vector<T> data, bool requires_grad, const char* op) {
  Tensor<T> out(std::move(shape), std::move(data), requires_grad);
  check_finite(out, op);
  return out;
}

inline void expect(bool cond, const char* op, const std::string& detail) {
  if (!cond) fail(ErrorKind::Dimension, std::string(op) + ": " + detail);
}

template <typename T>
void expect_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  expect(a.shape() == b.shape(), op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_same_shape(a, b, "add");
  std::vector<T> y(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] + bd[i];
  const bool rg = tape.wants({&a, &b});
  auto out = detail::emit<T>(a.shape(), std::move(y), rg, "add");
  if (rg)
    tape.record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  return out;
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_same_shape(a, b, "sub");
  std::vector<T> y(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] - bd[i];
  const bool rg = tape.wants({&a, &b});
  auto out = detail::emit<T>(a.shape(), std::move(y), rg, "sub");
  if (rg)
    tape.record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect_same_shape(a, b, "mul");
  std::vector<T> y(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] * bd[i];
  const bool rg = tape.wants({&a, &b});
  auto out = detail::emit<T>(a.shape(), std::move(y), rg, "mul");
  if (rg)
    tape.record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      auto ad = a.data(), bd = b.data();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
      }
    });
  return out;
}

/// y = mul * a + add, constants.
template <typename T>
Tensor<T> affine(Tape<T>& tape, const Tensor<T>& a, T mul, T add) {
  std::vector<T> y(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = mul * ad[i] + add;
  const bool rg = tape.wants({&a});
  auto out = detail::emit<T>(a.shape(), std::move(y), rg, "affine");
  if (rg)
    tape.record({a}, out, [a, out, mul]() mutable {
      auto g = out.grad();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += mul * g[i];
    });
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor) {
  return affine(tape, a, factor, T(0));
}

/// a * s where s is a one-element tensor (e.g. a learnable logit scale).
template <typename T>
Tensor<T> mul_scalar(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& s) {
  detail::expect(s.numel() == 1, "mul_scalar", "scalar operand has shape " + shape_str(s.shape()));
  const T sv = s.item();
  std::vector<T> y(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] * sv;
  const bool rg = tape.wants({&a, &s});
  auto out = detail::emit<T>(a.shape(), std::move(y), rg, "mul_scalar");
  if (rg)
    tape.record({a, s}, out, [a, s, out]() mutable {
      auto g = out.grad();
      auto ad = a.data();
      const T sv = s.item();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
      }
      if (s.requires_grad()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g[i]) * ad[i];
        s.mutable_grad()[0] += static_cast<T>(acc);
      }
    });
  return out;
}

template <typename T>
Tensor<T> exp(Tape<T>& tape, const Tensor<T>& a) {
  std::vector<T> y(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::exp(ad[i]);
  const bool rg = tape.wants({&a});
  auto out = detail::emit<T>(a.shape(), std::move(y), rg, "exp");
  if (rg)
    tape.record({a}, out, [a, out]() mutable {
      auto g = out.grad();
      auto yd = out.data();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yd[i];
    });
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& a) {
  std::vector<T> y(a.numel());
  auto ad = a.data();
  std::uint64_t mask = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool on = ad[i] > T(0);
    y[i] = on ? ad[i] : T(0);
    mask = (mask ^ (on ? i + 1 : 0)) * 0x100000001b3ULL;
  }
  tape.note_branches(mask);
  const bool rg = tape.wants({&a});
  auto out = detail::emit<T>(a.shape(), std::move(y), rg, "relu");
  if (rg)
    tape.record({a}, out, [a, out]() mutable {
      auto g = out.grad();
      auto ad = a.data();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (ad[i] > T(0)) ga[i] += g[i];
    });
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& a) {
  std::vector<T> y(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-ad[i]));
  const bool rg = tape.wants({&a});
  auto out = detail::emit<T>(a.shape(), std::move(y), rg, "sigmoid");
  if (rg)
    tape.record({a}, out, [a, out]() mutable {
      auto g = out.grad();
      auto yd = out.data();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yd[i] * (T(1) - yd[i]);
    });
  return out;
}

template <typename T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& a) {
  std::vector<T> y(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(ad[i]);
  const bool rg = tape.wants({&a});
  auto out = detail::emit<T>(a.shape(), std::move(y), rg, "tanh");
  if (rg)
    tape.record({a}, out, [a, out]() mutable {
      auto g = out.grad();
      auto yd = out.data();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - yd[i] * yd[i]);
    });
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops and reductions

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& a, Shape shape) {
  detail::expect(numel_of(shape) == a.numel(), "reshape",
                 "cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  const bool rg = tape.wants({&a});
  auto d = a.data();
  auto out = Tensor<T>(std::move(shape), std::vector<T>(d.begin(), d.end()), rg);
  if (rg)
    tape.record({a}, out, [a, out]() mutable {
      auto g = out.grad();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  return out;
}

template <typename T>
Tensor<T> transpose(Tape<T>& tape, const Tensor<T>& a) {
  detail::expect(a.rank() == 2, "transpose", "expects a matrix, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> y(m * n);
  auto ad = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = ad[i * n + j];
  const bool rg = tape.wants({&a});
  auto out = detail::emit<T>({n, m}, std::move(y), rg, "transpose");
  if (rg)
    tape.record({a}, out, [a, out, m, n]() mutable {
      auto g = out.grad();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  return out;
}

template <typename T>
Tensor<T> diag(Tape<T>& tape, const Tensor<T>& a) {
  detail::expect(a.rank() == 2 && a.dim(0) == a.dim(1), "diag", "expects a square matrix, got " + shape_str(a.shape()));
  const std::size_t n = a.dim(0);
  std::vector<T> y(n);
  auto ad = a.data();
  for (std::size_t i = 0; i < n; ++i) y[i] = ad[i * n + i];
  const bool rg = tape.wants({&a});
  auto out = detail::emit<T>({n}, std::move(y), rg, "diag");
  if (rg)
    tape.record({a}, out, [a, out, n]() mutable {
      auto g = out.grad();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < n; ++i) ga[i * n + i] += g[i];
    });
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  double acc = 0.0;
  for (T v : a.data()) acc += v;
  const bool rg = tape.wants({&a});
  auto out = detail::emit<T>({1}, {static_cast<T>(acc)}, rg, "sum");
  if (rg)
    tape.record({a}, out, [a, out]() mutable {
      const T g = out.grad()[0];
      for (T& v : a.mutable_grad()) v += g;
    });
  return out;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& a) {
  return scale(tape, sum(tape, a), T(1) / static_cast<T>(a.numel()));
}

/// [N,p] ++ [N,q] -> [N,p+q]
template <typename T>
Tensor<T> concat_cols(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0), "concat_cols",
                 "incompatible operands " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t n = a.dim(0), p = a.dim(1), q = b.dim(1);
  std::vector<T> y(n * (p + q));
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(ad.data() + i * p, p, y.data() + i * (p + q));
    std::copy_n(bd.data() + i * q, q, y.data() + i * (p + q) + p);
  }
  const bool rg = tape.wants({&a, &b});
  auto out = detail::emit<T>({n, p + q}, std::move(y), rg, "concat_cols");
  if (rg)
    tape.record({a, b}, out, [a, b, out, n, p, q]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
      }
    });
  return out;
}

/// Mean over every axis after the channel axis: [N,C,...] -> [N,C], [C,T] -> [C].
template <typename T>
Tensor<T> mean_pool(Tape<T>& tape, const Tensor<T>& x) {
  detail::expect(x.rank() >= 2, "mean_pool", "expects rank >= 2, got " + shape_str(x.shape()));
  const bool batched = x.rank() >= 3;
  const std::size_t rows = batched ? x.dim(0) * x.dim(1) : x.dim(0);
  const std::size_t len = x.numel() / rows;
  std::vector<T> y(rows);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t t = 0; t < len; ++t) acc += xd[r * len + t];
    y[r] = static_cast<T>(acc / static_cast<double>(len));
  }
  const bool rg = tape.wants({&x});
  Shape shape = batched ? Shape{x.dim(0), x.dim(1)} : Shape{x.dim(0)};
  auto out = detail::emit<T>(std::move(shape), std::move(y), rg, "mean_pool");
  if (rg)
    tape.record({x}, out, [x, out, rows, len]() mutable {
      auto g = out.grad();
      auto gx = x.mutable_grad();
      const T inv = T(1) / static_cast<T>(len);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < len; ++t) gx[r * len + t] += g[r] * inv;
    });
  return out;
}

// ---------------------------------------------------------------------------
// Dense layers

/// [m,k] x [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::expect(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul",
                 "incompatible operands " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> y(m * n, T(0));
  kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), y.data());
  const bool rg = tape.wants({&a, &b});
  auto out = detail::emit<T>({m, n}, std::move(y), rg, "matmul");
  if (rg)
    tape.record({a, b}, out, [a, b, out, m, n, k]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) kernels::gemm_nt(m, k, n, g.data(), b.data().data(), a.mutable_grad().data());
      if (b.requires_grad()) kernels::gemm_tn(k, n, m, a.data().data(), g.data(), b.mutable_grad().data());
    });
  return out;
}

/// x[N,in] W[out,in]^T + bias[out]; bias may be undefined.
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
  detail::expect(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1), "linear",
                 "input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  const std::size_t n = x.dim(0), in = x.dim(1), outd = w.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias)
    detail::expect(bias.rank() == 1 && bias.dim(0) == outd, "linear", "bias shape " + shape_str(bias.shape()));
  std::vector<T> y(n * outd, T(0));
  if (has_bias) {
    auto bd = bias.data();
    for (std::size_t i = 0; i < n; ++i) std::copy(bd.begin(), bd.end(), y.begin() + i * outd);
  }
  kernels::gemm_nt(n, outd, in, x.data().data(), w.data().data(), y.data());
  const bool rg = tape.wants({&x, &w, &bias});
  auto out = detail::emit<T>({n, outd}, std::move(y), rg, "linear");
  if (rg)
    tape.record({x, w, bias}, out, [x, w, bias, out, n, in, outd]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) kernels::gemm_nn(n, in, outd, g.data(), w.data().data(), x.mutable_grad().data());
      if (w.requires_grad()) kernels::gemm_tn(outd, in, n, g.data(), x.data().data(), w.mutable_grad().data());
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < outd; ++j) gb[j] += g[i * outd + j];
      }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation, no kernel flip), lowered to im2col + gemm.

namespace detail {

struct Conv1dGeom {
  std::size_t n, cin, t, cout, k, stride, pad, tout;
};

template <typename T>
void im2col_1d(const Conv1dGeom& g, const T* x, T* col) {
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t j = 0; j < g.k; ++j) {
      T* row = col + (ci * g.k + j) * g.tout;
      for (std::size_t o = 0; o < g.tout; ++o) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
        row[o] = (src >= 0 && src < static_cast<std::ptrdiff_t>(g.t)) ? x[ci * g.t + static_cast<std::size_t>(src)] : T(0);
      }
    }
}

template <typename T>
void col2im_1d(const Conv1dGeom& g, const T* col, T* dx) {
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t j = 0; j < g.k; ++j) {
      const T* row = col + (ci * g.k + j) * g.tout;
      for (std::size_t o = 0; o < g.tout; ++o) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(g.t)) dx[ci * g.t + static_cast<std::size_t>(src)] += row[o];
      }
    }
}

struct Conv2dGeom {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, hout, wout;
};

template <typename T>
void im2col_2d(const Conv2dGeom& g, const T* x, T* col) {
  const std::size_t plane = g.hout * g.wout;
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t a = 0; a < g.kh; ++a)
      for (std::size_t b = 0; b < g.kw; ++b) {
        T* row = col + ((ci * g.kh + a) * g.kw + b) * plane;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy * g.stride + a) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox * g.stride + b) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(g.h) && sx >= 0 && sx < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wout + ox] =
                inside ? x[(ci * g.h + static_cast<std::size_t>(sy)) * g.w + static_cast<std::size_t>(sx)] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_2d(const Conv2dGeom& g, const T* col, T* dx) {
  const std::size_t plane = g.hout * g.wout;
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t a = 0; a < g.kh; ++a)
      for (std::size_t b = 0; b < g.kw; ++b) {
        const T* row = col + ((ci * g.kh + a) * g.kw + b) * plane;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy * g.stride + a) - static_cast<std::ptrdiff_t>(g.pad);
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox * g.stride + b) - static_cast<std::ptrdiff_t>(g.pad);
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dx[(ci * g.h + static_cast<std::size_t>(sy)) * g.w + static_cast<std::size_t>(sx)] += row[oy * g.wout + ox];
          }
        }
      }
}

}  // namespace detail

/// Output length of a 1-D convolution; throws when the kernel does not fit.
inline std::size_t conv_out_len(std::size_t len, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride < 1) fail(ErrorKind::Dimension, "conv: stride must be >= 1");
  if (len + 2 * pad < k)
    fail(ErrorKind::Dimension, "conv: kernel " + std::to_string(k) + " longer than padded input " + std::to_string(len + 2 * pad));
  return (len + 2 * pad - k) / stride + 1;
}

/// x [N,Cin,T] or [Cin,T]; kernels [Cout,Cin,k].
template <typename T>
Tensor<T> conv1d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernels, std::size_t stride, std::size_t padding) {
  detail::expect(x.rank() == 2 || x.rank() == 3, "conv1d", "input must be [C,T] or [N,C,T], got " + shape_str(x.shape()));
  detail::expect(kernels.rank() == 3, "conv1d", "kernels must be [Cout,Cin,k], got " + shape_str(kernels.shape()));
  const bool batched = x.rank() == 3;
  detail::Conv1dGeom g{};
  g.n = batched ? x.dim(0) : 1;
  g.cin = batched ? x.dim(1) : x.dim(0);
  g.t = batched ? x.dim(2) : x.dim(1);
  g.cout = kernels.dim(0);
  g.k = kernels.dim(2);
  g.stride = stride;
  g.pad = padding;
  detail::expect(kernels.dim(1) == g.cin, "conv1d",
                 "kernel expects " + std::to_string(kernels.dim(1)) + " input channels, input has " + std::to_string(g.cin));
  g.tout = conv_out_len(g.t, g.k, stride, padding);

  const std::size_t kdim = g.cin * g.k;
  std::vector<T> y(g.n * g.cout * g.tout, T(0));
  std::vector<T> col(kdim * g.tout);
  auto xd = x.data();
  auto wd = kernels.data();
  for (std::size_t s = 0; s < g.n; ++s) {
    detail::im2col_1d(g, xd.data() + s * g.cin * g.t, col.data());
    kernels::gemm_nn(g.cout, g.tout, kdim, wd.data(), col.data(), y.data() + s * g.cout * g.tout);
  }
  const bool rg = tape.wants({&x, &kernels});
  Shape shape = batched ? Shape{g.n, g.cout, g.tout} : Shape{g.cout, g.tout};
  auto out = detail::emit<T>(std::move(shape), std::move(y), rg, "conv1d");
  if (rg)
    tape.record({x, kernels}, out, [x, kernels, out, g]() mutable {
      const std::size_t kdim = g.cin * g.k;
      auto gy = out.grad();
      auto xd = x.data();
      auto wd = kernels.data();
      std::vector<T> col(kdim * g.tout);
      std::vector<T> dcol(kdim * g.tout);
      for (std::size_t s = 0; s < g.n; ++s) {
        const T* gys = gy.data() + s * g.cout * g.tout;
        if (kernels.requires_grad()) {
          detail::im2col_1d(g, xd.data() + s * g.cin * g.t, col.data());
          kernels::gemm_nt(g.cout, kdim, g.tout, gys, col.data(), kernels.mutable_grad().data());
        }
        if (x.requires_grad()) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          kernels::gemm_tn(kdim, g.tout, g.cout, wd.data(), gys, dcol.data());
          detail::col2im_1d(g, dcol.data(), x.mutable_grad().data() + s * g.cin * g.t);
        }
      }
    });
  return out;
}

/// x [N,Cin,H,W]; kernels [Cout,Cin,kh,kw]; bias [Cout] or undefined.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  detail::expect(x.rank() == 4, "conv2d", "input must be [N,C,H,W], got " + shape_str(x.shape()));
  detail::expect(kernels.rank() == 4, "conv2d", "kernels must be [Cout,Cin,kh,kw], got " + shape_str(kernels.shape()));
  detail::Conv2dGeom g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = kernels.dim(0);
  g.kh = kernels.dim(2);
  g.kw = kernels.dim(3);
  g.stride = stride;
  g.pad = padding;
  detail::expect(kernels.dim(1) == g.cin, "conv2d", "input channel mismatch");
  g.hout = conv_out_len(g.h, g.kh, stride, padding);
  g.wout = conv_out_len(g.w, g.kw, stride, padding);
  const bool has_bias = bias.defined();
  if (has_bias) detail::expect(bias.rank() == 1 && bias.dim(0) == g.cout, "conv2d", "bias shape " + shape_str(bias.shape()));

  const std::size_t kdim = g.cin * g.kh * g.kw;
  const std::size_t plane = g.hout * g.wout;
  std::vector<T> y(g.n * g.cout * plane, T(0));
  std::vector<T> col(kdim * plane);
  auto xd = x.data();
  auto wd = kernels.data();
  for (std::size_t s = 0; s < g.n; ++s) {
    T* ys = y.data() + s * g.cout * plane;
    if (has_bias) {
      auto bd = bias.data();
      for (std::size_t c = 0; c < g.cout; ++c) std::fill_n(ys + c * plane, plane, bd[c]);
    }
    detail::im2col_2d(g, xd.data() + s * g.cin * g.h * g.w, col.data());
    kernels::gemm_nn(g.cout, plane, kdim, wd.data(), col.data(), ys);
  }
  const bool rg = tape.wants({&x, &kernels, &bias});
  auto out = detail::emit<T>({g.n, g.cout, g.hout, g.wout}, std::move(y), rg, "conv2d");
  if (rg)
    tape.record({x, kernels, bias}, out, [x, kernels, bias, out, g]() mutable {
      const std::size_t kdim = g.cin * g.kh * g.kw;
      const std::size_t plane = g.hout * g.wout;
      auto gy = out.grad();
      auto xd = x.data();
      auto wd = kernels.data();
      std::vector<T> col(kdim * plane);
      std::vector<T> dcol(kdim * plane);
      for (std::size_t s = 0; s < g.n; ++s) {
        const T* gys = gy.data() + s * g.cout * plane;
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.mutable_grad();
          for (std::size_t c = 0; c < g.cout; ++c) {
            double acc = 0.0;
            for (std::size_t p = 0; p < plane; ++p) acc += gys[c * plane + p];
            gb[c] += static_cast<T>(acc);
          }
        }
        if (kernels.requires_grad()) {
          detail::im2col_2d(g, xd.data() + s * g.cin * g.h * g.w, col.data());
          kernels::gemm_nt(g.cout, kdim, plane, gys, col.data(), kernels.mutable_grad().data());
        }
        if (x.requires_grad()) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          kernels::gemm_tn(kdim, plane, g.cout, wd.data(), gys, dcol.data());
          detail::col2im_2d(g, dcol.data(), x.mutable_grad().data() + s * g.cin * g.h * g.w);
        }
      }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

/// Group normalization over [N,C,...] (or [C,T]); gamma/beta [C] or both
/// undefined for no affine. Each (sample, group) is standardized with the
/// biased variance and eps inside the square root.
template <typename T>
Tensor<T> group_norm(Tape<T>& tape, const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  detail::expect(x.rank() >= 2, "group_norm", "expects rank >= 2, got " + shape_str(x.shape()));
  const bool batched = x.rank() >= 3;
  const std::size_t n = batched ? x.dim(0) : 1;
  const std::size_t c = batched ? x.dim(1) : x.dim(0);
  const std::size_t len = x.numel() / (n * c);
  if (groups == 0 || c % groups != 0)
    fail(ErrorKind::Config, "group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
  if (!(eps > T(0))) fail(ErrorKind::Config, "group_norm: eps must be positive");
  const bool affine = gamma.defined();
  detail::expect(affine == beta.defined(), "group_norm", "gamma and beta must be given together");
  if (affine)
    detail::expect(gamma.numel() == c && beta.numel() == c, "group_norm", "affine parameters must have " + std::to_string(c) + " entries");

  const std::size_t cg = c / groups;
  const std::size_t m = cg * len;
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(n * groups);
  std::vector<T> y(x.numel());
  auto xd = x.data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t off = (s * c + gi * cg) * len;
      double mu = 0.0;
      for (std::size_t i = 0; i < m; ++i) mu += xd[off + i];
      mu /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = xd[off + i] - mu;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
      inv_std[s * groups + gi] = static_cast<T>(inv);
      for (std::size_t i = 0; i < m; ++i) xhat[off + i] = static_cast<T>((xd[off + i] - mu) * inv);
    }
  if (affine) {
    auto gd = gamma.data(), bd = beta.data();
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t off = (s * c + ch) * len;
        for (std::size_t t = 0; t < len; ++t) y[off + t] = gd[ch] * xhat[off + t] + bd[ch];
      }
  } else {
    y = xhat;
  }
  const bool rg = tape.wants({&x, &gamma, &beta});
  auto out = detail::emit<T>(x.shape(), std::move(y), rg, "group_norm");
  if (rg)
    tape.record({x, gamma, beta}, out,
                [x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, len, groups, cg, m]() mutable {
                  auto gy = out.grad();
                  const bool affine = gamma.defined();
                  if (affine && (gamma.requires_grad() || beta.requires_grad())) {
                    std::vector<double> dg(c, 0.0), db(c, 0.0);
                    for (std::size_t s = 0; s < n; ++s)
                      for (std::size_t ch = 0; ch < c; ++ch) {
                        const std::size_t off = (s * c + ch) * len;
                        for (std::size_t t = 0; t < len; ++t) {
                          dg[ch] += static_cast<double>(gy[off + t]) * xhat[off + t];
                          db[ch] += gy[off + t];
                        }
                      }
                    if (gamma.requires_grad()) {
                      auto gg = gamma.mutable_grad();
                      for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += static_cast<T>(dg[ch]);
                    }
                    if (beta.requires_grad()) {
                      auto gb = beta.mutable_grad();
                      for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += static_cast<T>(db[ch]);
                    }
                  }
                  if (!x.requires_grad()) return;
                  auto gx = x.mutable_grad();
                  std::vector<T> dxhat(m);
                  for (std::size_t s = 0; s < n; ++s)
                    for (std::size_t gi = 0; gi < groups; ++gi) {
                      const std::size_t off = (s * c + gi * cg) * len;
                      for (std::size_t i = 0; i < m; ++i) {
                        const std::size_t ch = gi * cg + i / len;
                        dxhat[i] = affine ? gy[off + i] * gamma.data()[ch] : gy[off + i];
                      }
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t i = 0; i < m; ++i) {
                        s1 += dxhat[i];
                        s2 += static_cast<double>(dxhat[i]) * xhat[off + i];
                      }
                      s1 /= static_cast<double>(m);
                      s2 /= static_cast<double>(m);
                      const double inv = inv_std[s * groups + gi];
                      for (std::size_t i = 0; i < m; ++i)
                        gx[off + i] += static_cast<T>(inv * (dxhat[i] - s1 - xhat[off + i] * s2));
                    }
                });
  return out;
}

/// Per-(sample, channel) standardization over time; [N,C,T] or [C,T], T >= 2.
template <typename T>
Tensor<T> instance_norm(Tape<T>& tape, const Tensor<T>& x, T eps = T(1e-5)) {
  detail::expect(x.rank() >= 2, "instance_norm", "expects rank >= 2, got " + shape_str(x.shape()));
  const std::size_t c = x.rank() >= 3 ? x.dim(1) : x.dim(0);
  const std::size_t n = x.rank() >= 3 ? x.dim(0) : 1;
  detail::expect(x.numel() / (n * c) >= 2, "instance_norm", "needs at least two time steps");
  return group_norm(tape, x, c, Tensor<T>{}, Tensor<T>{}, eps);
}

/// Per-(sample, channel) level and scale of [N,C,T]: returns [N,2C] holding
/// asinh(mean) for every channel followed by 0.5*ln(var + eps). These are the
/// quantities instance_norm discards, squashed to a trainable range.
template <typename T>
Tensor<T> channel_stats(Tape<T>& tape, const Tensor<T>& x, T eps = T(1e-5)) {
  detail::expect(x.rank() == 3, "channel_stats", "expects [N,C,T], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), len = x.dim(2);
  std::vector<T> y(n * 2 * c);
  std::vector<double> mu(n * c), var(n * c);
  auto xd = x.data();
  for (std::size_t r = 0; r < n * c; ++r) {
    double m = 0.0;
    for (std::size_t t = 0; t < len; ++t) m += xd[r * len + t];
    m /= static_cast<double>(len);
    double v = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      const double d = xd[r * len + t] - m;
      v += d * d;
    }
    v /= static_cast<double>(len);
    mu[r] = m;
    var[r] = v;
    const std::size_t s = r / c, ch = r % c;
    y[s * 2 * c + ch] = static_cast<T>(std::asinh(m));
    y[s * 2 * c + c + ch] = static_cast<T>(0.5 * std::log(v + static_cast<double>(eps)));
  }
  const bool rg = tape.wants({&x});
  auto out = detail::emit<T>({n, 2 * c}, std::move(y), rg, "channel_stats");
  if (rg)
    tape.record({x}, out, [x, out, mu = std::move(mu), var = std::move(var), n, c, len, eps]() mutable {
      auto gy = out.grad();
      auto xd = x.data();
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < n * c; ++r) {
        const std::size_t s = r / c, ch = r % c;
        const double g_mean = gy[s * 2 * c + ch] / std::sqrt(1.0 + mu[r] * mu[r]) / static_cast<double>(len);
        const double g_var = gy[s * 2 * c + c + ch] / ((var[r] + static_cast<double>(eps)) * static_cast<double>(len));
        for (std::size_t t = 0; t < len; ++t) gx[r * len + t] += static_cast<T>(g_mean + g_var * (xd[r * len + t] - mu[r]));
      }
    });
  return out;
}

/// Row-wise unit normalization of [N,d] (or a single [d] vector).
template <typename T>
Tensor<T> l2_normalize(Tape<T>& tape, const Tensor<T>& v) {
  detail::expect(v.rank() == 1 || v.rank() == 2, "l2_normalize", "expects [d] or [N,d], got " + shape_str(v.shape()));
  const std::size_t rows = v.rank() == 2 ? v.dim(0) : 1;
  const std::size_t d = v.numel() / rows;
  std::vector<T> y(v.numel());
  std::vector<T> norms(rows);
  auto vd = v.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += static_cast<double>(vd[r * d + j]) * vd[r * d + j];
    const double norm = std::sqrt(acc);
    if (!(norm > 0.0)) fail(ErrorKind::Degenerate, "l2_normalize: zero-norm vector at row " + std::to_string(r));
    norms[r] = static_cast<T>(norm);
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = static_cast<T>(vd[r * d + j] / norm);
  }
  const bool rg = tape.wants({&v});
  auto out = detail::emit<T>(v.shape(), std::move(y), rg, "l2_normalize");
  if (rg)
    tape.record({v}, out, [v, out, norms = std::move(norms), rows, d]() mutable {
      auto gy = out.grad();
      auto yd = out.data();
      auto gv = v.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(yd[r * d + j]) * gy[r * d + j];
        for (std::size_t j = 0; j < d; ++j)
          gv[r * d + j] += static_cast<T>((gy[r * d + j] - yd[r * d + j] * dot) / norms[r]);
      }
    });
  return out;
}

/// Row-wise log-softmax of [N,M].
template <typename T>
Tensor<T> log_softmax(Tape<T>& tape, const Tensor<T>& x) {
  detail::expect(x.rank() == 2, "log_softmax", "expects [N,M], got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> y(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(acc);
    for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] = static_cast<T>(row[j] - lse);
  }
  const bool rg = tape.wants({&x});
  auto out = detail::emit<T>(x.shape(), std::move(y), rg, "log_softmax");
  if (rg)
    tape.record({x}, out, [x, out, rows, cols]() mutable {
      auto gy = out.grad();
      auto yd = out.data();
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double gs = 0.0;
        for (std::size_t j = 0; j < cols; ++j) gs += gy[r * cols + j];
        for (std::size_t j = 0; j < cols; ++j)
          gx[r * cols + j] += static_cast<T>(gy[r * cols + j] - std::exp(static_cast<double>(yd[r * cols + j])) * gs);
      }
    });
  return out;
}

}  // namespace locoalign::ad
