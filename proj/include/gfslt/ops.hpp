#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gfslt/errors.hpp"
#include "gfslt/kernels.hpp"
#include "gfslt/tape.hpp"
#include "gfslt/tensor.hpp"

namespace gfslt {

// A NaN or Inf anywhere in a forward op aborts the step instead of
// propagating. Summing |x| in double turns the element scan into one
// finiteness test: the sum is finite iff every element is.
template <class T>
inline void check_finite(const Tensor<T>& t, const char* op) {
  const T* p = t.ptr();
  const std::int64_t n = t.numel();
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += std::fabs(static_cast<double>(p[i]));
    s1 += std::fabs(static_cast<double>(p[i + 1]));
    s2 += std::fabs(static_cast<double>(p[i + 2]));
    s3 += std::fabs(static_cast<double>(p[i + 3]));
  }
  double s = (s0 + s1) + (s2 + s3);
  for (; i < n; ++i) s += std::fabs(static_cast<double>(p[i]));
  if (!std::isfinite(s))
    throw NumericError(std::string(op) + " produced non-finite values");
}

namespace detail {

template <class T>
inline Tensor<T> make_out(Tape<T>& tape, std::vector<int> shape, bool any_input_grad) {
  return Tensor<T>::zeros(std::move(shape), tape.grad() && any_input_grad);
}

template <class T>
inline bool wants_grad(const Tensor<T>& t) {
  return t.requires_grad && t.grad != nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / broadcast
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape)
    throw DimError("add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor<T> out = detail::make_out(tape, a.shape, a.requires_grad || b.requires_grad);
  const std::int64_t n = out.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  check_finite(out, "add");
  if (out.requires_grad) {
    tape.record([a, b, out, n]() mutable {
      const T* g = out.grad_ptr();
      if (detail::wants_grad(a)) {
        T* ga = a.grad_ptr();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (detail::wants_grad(b)) {
        T* gb = b.grad_ptr();
        for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape)
    throw DimError("mul: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor<T> out = detail::make_out(tape, a.shape, a.requires_grad || b.requires_grad);
  const std::int64_t n = out.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  check_finite(out, "mul");
  if (out.requires_grad) {
    tape.record([a, b, out, n]() mutable {
      const T* g = out.grad_ptr();
      if (detail::wants_grad(a)) {
        T* ga = a.grad_ptr();
        const T* pb2 = b.ptr();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb2[i];
      }
      if (detail::wants_grad(b)) {
        T* gb = b.grad_ptr();
        const T* pa2 = a.ptr();
        for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul_scalar(Tape<T>& tape, const Tensor<T>& x, double c) {
  Tensor<T> out = detail::make_out(tape, x.shape, x.requires_grad);
  const std::int64_t n = out.numel();
  const T* px = x.ptr();
  T* po = out.ptr();
  const T cv = static_cast<T>(c);
  for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] * cv;
  check_finite(out, "mul_scalar");
  if (out.requires_grad) {
    tape.record([x, out, n, cv]() mutable {
      if (!detail::wants_grad(x)) return;
      const T* g = out.grad_ptr();
      T* gx = x.grad_ptr();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * cv;
    });
  }
  return out;
}

// x * s where s is a learnable scalar tensor of shape [1].
template <class T>
Tensor<T> mul_scalar_t(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& s) {
  if (s.numel() != 1) throw DimError("mul_scalar_t: scale must be scalar, got " + shape_str(s.shape));
  Tensor<T> out = detail::make_out(tape, x.shape, x.requires_grad || s.requires_grad);
  const std::int64_t n = out.numel();
  const T sv = (*s.data)[0];
  const T* px = x.ptr();
  T* po = out.ptr();
  for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] * sv;
  check_finite(out, "mul_scalar_t");
  if (out.requires_grad) {
    tape.record([x, s, out, n, sv]() mutable {
      const T* g = out.grad_ptr();
      if (detail::wants_grad(x)) {
        T* gx = x.grad_ptr();
        for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * sv;
      }
      if (detail::wants_grad(s)) {
        const T* px2 = x.ptr();
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
          acc += static_cast<double>(g[i]) * static_cast<double>(px2[i]);
        (*s.grad)[0] += static_cast<T>(acc);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> add_rowvec(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() != 2 || b.numel() != x.dim(1))
    throw DimError("add_rowvec: " + shape_str(x.shape) + " + " + shape_str(b.shape));
  const int m = x.dim(0), n = x.dim(1);
  Tensor<T> out = detail::make_out(tape, x.shape, x.requires_grad || b.requires_grad);
  const T* px = x.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) po[static_cast<std::int64_t>(i) * n + j] = px[static_cast<std::int64_t>(i) * n + j] + pb[j];
  check_finite(out, "add_rowvec");
  if (out.requires_grad) {
    tape.record([x, b, out, m, n]() mutable {
      const T* g = out.grad_ptr();
      if (detail::wants_grad(x)) {
        T* gx = x.grad_ptr();
        const std::int64_t total = static_cast<std::int64_t>(m) * n;
        for (std::int64_t i = 0; i < total; ++i) gx[i] += g[i];
      }
      if (detail::wants_grad(b)) {
        T* gb = b.grad_ptr();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb[j] += g[static_cast<std::int64_t>(i) * n + j];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out = detail::make_out(tape, x.shape, x.requires_grad);
  const std::int64_t n = out.numel();
  const T* px = x.ptr();
  T* po = out.ptr();
  for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  check_finite(out, "relu");
  if (out.requires_grad) {
    tape.record([x, out, n]() mutable {
      if (!detail::wants_grad(x)) return;
      const T* g = out.grad_ptr();
      const T* px2 = x.ptr();
      T* gx = x.grad_ptr();
      for (std::int64_t i = 0; i < n; ++i)
        if (px2[i] > T(0)) gx[i] += g[i];
    });
  }
  return out;
}

// Zero out rows whose keep flag is false; gradient is masked the same way.
template <class T>
Tensor<T> mask_rows(Tape<T>& tape, const Tensor<T>& x, std::vector<std::uint8_t> keep) {
  if (x.rank() != 2 || static_cast<int>(keep.size()) != x.dim(0))
    throw DimError("mask_rows: " + shape_str(x.shape) + " with " + std::to_string(keep.size()) + " flags");
  const int m = x.dim(0), n = x.dim(1);
  Tensor<T> out = detail::make_out(tape, x.shape, x.requires_grad);
  auto flags = std::make_shared<std::vector<std::uint8_t>>(std::move(keep));
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int i = 0; i < m; ++i) {
    const std::int64_t off = static_cast<std::int64_t>(i) * n;
    if ((*flags)[static_cast<std::size_t>(i)])
      std::copy(px + off, px + off + n, po + off);
    else
      std::fill(po + off, po + off + n, T(0));
  }
  check_finite(out, "mask_rows");
  if (out.requires_grad) {
    tape.record([x, out, flags, m, n]() mutable {
      if (!detail::wants_grad(x)) return;
      const T* g = out.grad_ptr();
      T* gx = x.grad_ptr();
      for (int i = 0; i < m; ++i) {
        if (!(*flags)[static_cast<std::size_t>(i)]) continue;
        const std::int64_t off = static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) gx[off + j] += g[off + j];
      }
    });
  }
  return out;
}

// Cut the graph: same data, no gradient flow.
template <class T>
Tensor<T> detach(const Tensor<T>& x) {
  Tensor<T> out;
  out.shape = x.shape;
  out.data = x.data;
  out.requires_grad = false;
  return out;
}

// View with a different shape. Data and grad buffers are shared, so gradients
// flow through without a tape node.
template <class T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> shape) {
  if (shape_numel(shape) != x.numel())
    throw DimError("reshape: " + shape_str(x.shape) + " to " + shape_str(shape));
  Tensor<T> out = x;
  out.shape = std::move(shape);
  return out;
}

// ---------------------------------------------------------------------------
// matmul family
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimError("matmul: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out = detail::make_out(tape, {m, n}, a.requires_grad || b.requires_grad);
  kernels::matmul_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n, false);
  check_finite(out, "matmul");
  if (out.requires_grad) {
    tape.record([a, b, out, m, k, n]() mutable {
      if (detail::wants_grad(a)) kernels::matmul_nt(out.grad_ptr(), b.ptr(), a.grad_ptr(), m, n, k, true);
      if (detail::wants_grad(b)) kernels::matmul_tn(a.ptr(), out.grad_ptr(), b.grad_ptr(), m, k, n, true);
    });
  }
  return out;
}

// a[m,k] * b[n,k]^T without materializing the transpose.
template <class T>
Tensor<T> matmul_nt(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw DimError("matmul_nt: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape) + "^T");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor<T> out = detail::make_out(tape, {m, n}, a.requires_grad || b.requires_grad);
  kernels::matmul_nt(a.ptr(), b.ptr(), out.ptr(), m, k, n, false);
  check_finite(out, "matmul_nt");
  if (out.requires_grad) {
    tape.record([a, b, out, m, k, n]() mutable {
      if (detail::wants_grad(a)) kernels::matmul_nn(out.grad_ptr(), b.ptr(), a.grad_ptr(), m, n, k, true);
      if (detail::wants_grad(b)) kernels::matmul_tn(out.grad_ptr(), a.ptr(), b.grad_ptr(), m, n, k, true);
    });
  }
  return out;
}

template <class T>
Tensor<T> transpose(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() != 2) throw DimError("transpose: rank-2 required, got " + shape_str(x.shape));
  const int m = x.dim(0), n = x.dim(1);
  Tensor<T> out = detail::make_out(tape, {n, m}, x.requires_grad);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) po[static_cast<std::int64_t>(j) * m + i] = px[static_cast<std::int64_t>(i) * n + j];
  if (out.requires_grad) {
    tape.record([x, out, m, n]() mutable {
      if (!detail::wants_grad(x)) return;
      const T* g = out.grad_ptr();
      T* gx = x.grad_ptr();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gx[static_cast<std::int64_t>(i) * n + j] += g[static_cast<std::int64_t>(j) * m + i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization / softmax
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, int axis = -1) {
  const int rank = x.rank();
  if (axis < 0) axis += rank;
  if (axis == 0 && rank == 2 && axis != rank - 1) {
    Tensor<T> xt = transpose(tape, x);
    Tensor<T> yt = softmax(tape, xt, -1);
    return transpose(tape, yt);
  }
  if (axis != rank - 1)
    throw DimError("softmax: axis " + std::to_string(axis) + " unsupported for " + shape_str(x.shape));
  const int n = x.dim(rank - 1);
  if (n < 1) throw DimError("softmax: empty axis in " + shape_str(x.shape));
  const int rows = static_cast<int>(x.numel() / n);
  Tensor<T> out = detail::make_out(tape, x.shape, x.requires_grad);
  kernels::softmax_rows(x.ptr(), out.ptr(), rows, n);
  check_finite(out, "softmax");
  if (out.requires_grad) {
    tape.record([x, out, rows, n]() mutable {
      if (!detail::wants_grad(x)) return;
      const T* y = out.ptr();
      const T* g = out.grad_ptr();
      T* gx = x.grad_ptr();
      for (int r = 0; r < rows; ++r) {
        const std::int64_t off = static_cast<std::int64_t>(r) * n;
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += static_cast<double>(g[off + j]) * y[off + j];
        for (int j = 0; j < n; ++j)
          gx[off + j] += y[off + j] * (g[off + j] - static_cast<T>(s));
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> log_softmax_rows(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() != 2) throw DimError("log_softmax_rows: rank-2 required, got " + shape_str(x.shape));
  const int rows = x.dim(0), n = x.dim(1);
  Tensor<T> out = detail::make_out(tape, x.shape, x.requires_grad);
  kernels::log_softmax_rows(x.ptr(), out.ptr(), rows, n);
  check_finite(out, "log_softmax");
  if (out.requires_grad) {
    tape.record([x, out, rows, n]() mutable {
      if (!detail::wants_grad(x)) return;
      const T* y = out.ptr();
      const T* g = out.grad_ptr();
      T* gx = x.grad_ptr();
      for (int r = 0; r < rows; ++r) {
        const std::int64_t off = static_cast<std::int64_t>(r) * n;
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += g[off + j];
        for (int j = 0; j < n; ++j)
          gx[off + j] += g[off + j] - static_cast<T>(std::exp(static_cast<double>(y[off + j])) * s);
      }
    });
  }
  return out;
}

// Rows of x are normalized to zero mean / unit variance over the last axis,
// then scaled and shifted: y = xhat * gain + bias.
template <class T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, double eps = 1e-5) {
  const int d = x.dim(x.rank() - 1);
  if (gain.numel() != d || bias.numel() != d)
    throw DimError("layer_norm: gain/bias " + shape_str(gain.shape) + "/" + shape_str(bias.shape) +
                   " vs width " + std::to_string(d));
  if (eps <= 0) throw ConfigError("layer_norm: eps must be > 0");
  const int rows = static_cast<int>(x.numel() / d);
  Tensor<T> out = detail::make_out(tape, x.shape, x.requires_grad || gain.requires_grad || bias.requires_grad);
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  kernels::layer_norm_rows(x.ptr(), gain.ptr(), bias.ptr(), out.ptr(), xhat->data(),
                           inv_std->data(), rows, d, eps);
  check_finite(out, "layer_norm");
  if (out.requires_grad) {
    tape.record([x, gain, bias, out, xhat, inv_std, rows, d]() mutable {
      const T* g = out.grad_ptr();
      if (detail::wants_grad(gain)) {
        T* gg = gain.grad_ptr();
        for (int r = 0; r < rows; ++r) {
          const std::int64_t off = static_cast<std::int64_t>(r) * d;
          for (int j = 0; j < d; ++j) gg[j] += g[off + j] * (*xhat)[off + j];
        }
      }
      if (detail::wants_grad(bias)) {
        T* gb = bias.grad_ptr();
        for (int r = 0; r < rows; ++r) {
          const std::int64_t off = static_cast<std::int64_t>(r) * d;
          for (int j = 0; j < d; ++j) gb[j] += g[off + j];
        }
      }
      if (detail::wants_grad(x)) {
        kernels::layer_norm_backward_rows(g, gain.ptr(), xhat->data(), inv_std->data(),
                                          x.grad_ptr(), rows, d);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolution / pooling
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> conv1d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  if (x.rank() != 2 || w.rank() != 3 || x.dim(1) != w.dim(1))
    throw DimError("conv1d: x " + shape_str(x.shape) + " w " + shape_str(w.shape));
  if (stride < 1 || pad < 0) throw ConfigError("conv1d: stride must be >= 1 and pad >= 0");
  const int t_in = x.dim(0), c_in = x.dim(1), k = w.dim(0), c_out = w.dim(2);
  if (t_in + 2 * pad < k)
    throw DimError("conv1d: window " + std::to_string(k) + " larger than padded input " +
                   std::to_string(t_in + 2 * pad));
  const int t_out = (t_in + 2 * pad - k) / stride + 1;
  Tensor<T> out = detail::make_out(tape, {t_out, c_out}, x.requires_grad || w.requires_grad);
  kernels::conv1d_forward(x.ptr(), w.ptr(), out.ptr(), t_in, c_in, k, c_out, stride, pad, t_out);
  check_finite(out, "conv1d");
  if (out.requires_grad) {
    tape.record([x, w, out, t_in, c_in, k, c_out, stride, pad, t_out]() mutable {
      if (detail::wants_grad(x))
        kernels::conv1d_backward_x(out.grad_ptr(), w.ptr(), x.grad_ptr(), t_in, c_in, k, c_out, stride, pad, t_out);
      if (detail::wants_grad(w))
        kernels::conv1d_backward_w(x.ptr(), out.grad_ptr(), w.grad_ptr(), t_in, c_in, k, c_out, stride, pad, t_out);
    });
  }
  return out;
}

// Subgradient routes to the argmax; ties go to the lowest index.
template <class T>
Tensor<T> maxpool1d(Tape<T>& tape, const Tensor<T>& x, int window, int stride) {
  if (x.rank() != 2) throw DimError("maxpool1d: rank-2 required, got " + shape_str(x.shape));
  if (window < 1 || stride < 1) throw ConfigError("maxpool1d: window/stride must be >= 1");
  const int t_in = x.dim(0), d = x.dim(1);
  if (t_in < window)
    throw DimError("maxpool1d: input length " + std::to_string(t_in) + " smaller than window " +
                   std::to_string(window));
  const int t_out = (t_in - window) / stride + 1;
  Tensor<T> out = detail::make_out(tape, {t_out, d}, x.requires_grad);
  auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(t_out) * d);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int t = 0; t < t_out; ++t) {
    for (int j = 0; j < d; ++j) {
      int best = t * stride;
      T bv = px[static_cast<std::int64_t>(best) * d + j];
      for (int u = 1; u < window; ++u) {
        const int ti = t * stride + u;
        const T v = px[static_cast<std::int64_t>(ti) * d + j];
        if (v > bv) {
          bv = v;
          best = ti;
        }
      }
      po[static_cast<std::int64_t>(t) * d + j] = bv;
      (*argmax)[static_cast<std::size_t>(t) * d + j] = best;
    }
  }
  check_finite(out, "maxpool1d");
  if (out.requires_grad) {
    tape.record([x, out, argmax, t_out, d]() mutable {
      if (!detail::wants_grad(x)) return;
      const T* g = out.grad_ptr();
      T* gx = x.grad_ptr();
      for (int t = 0; t < t_out; ++t)
        for (int j = 0; j < d; ++j)
          gx[static_cast<std::int64_t>((*argmax)[static_cast<std::size_t>(t) * d + j]) * d + j] +=
              g[static_cast<std::int64_t>(t) * d + j];
    });
  }
  return out;
}

template <class T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(3) != w.dim(2))
    throw DimError("conv2d: x " + shape_str(x.shape) + " w " + shape_str(w.shape));
  const int n = x.dim(0), h = x.dim(1), ww = x.dim(2), c_in = x.dim(3);
  const int kh = w.dim(0), kw = w.dim(1), c_out = w.dim(3);
  if (h + 2 * pad < kh || ww + 2 * pad < kw)
    throw DimError("conv2d: kernel " + shape_str(w.shape) + " larger than padded input " + shape_str(x.shape));
  const int h_out = (h + 2 * pad - kh) / stride + 1;
  const int w_out = (ww + 2 * pad - kw) / stride + 1;
  Tensor<T> out = detail::make_out(tape, {n, h_out, w_out, c_out}, x.requires_grad || w.requires_grad);
  kernels::conv2d_forward(x.ptr(), w.ptr(), out.ptr(), n, h, ww, c_in, kh, kw, c_out, stride, pad, h_out, w_out);
  check_finite(out, "conv2d");
  if (out.requires_grad) {
    tape.record([x, w, out, n, h, ww, c_in, kh, kw, c_out, stride, pad, h_out, w_out]() mutable {
      if (detail::wants_grad(x))
        kernels::conv2d_backward_x(out.grad_ptr(), w.ptr(), x.grad_ptr(), n, h, ww, c_in, kh, kw, c_out, stride, pad, h_out, w_out);
      if (detail::wants_grad(w))
        kernels::conv2d_backward_w(x.ptr(), out.grad_ptr(), w.grad_ptr(), n, h, ww, c_in, kh, kw, c_out, stride, pad, h_out, w_out);
    });
  }
  return out;
}

template <class T>
Tensor<T> maxpool2d(Tape<T>& tape, const Tensor<T>& x, int window, int stride) {
  if (x.rank() != 4) throw DimError("maxpool2d: rank-4 required, got " + shape_str(x.shape));
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (h < window || w < window)
    throw DimError("maxpool2d: input " + shape_str(x.shape) + " smaller than window " + std::to_string(window));
  const int h_out = (h - window) / stride + 1;
  const int w_out = (w - window) / stride + 1;
  Tensor<T> out = detail::make_out(tape, {n, h_out, w_out, c}, x.requires_grad);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
  const T* px = x.ptr();
  T* po = out.ptr();
  std::int64_t oi = 0;
  for (int f = 0; f < n; ++f) {
    const std::int64_t base = static_cast<std::int64_t>(f) * h * w * c;
    for (int oy = 0; oy < h_out; ++oy) {
      for (int ox = 0; ox < w_out; ++ox) {
        for (int ch = 0; ch < c; ++ch, ++oi) {
          std::int64_t best = base + (static_cast<std::int64_t>(oy * stride) * w + ox * stride) * c + ch;
          T bv = px[best];
          for (int dy = 0; dy < window; ++dy) {
            for (int dx = 0; dx < window; ++dx) {
              const std::int64_t idx =
                  base + (static_cast<std::int64_t>(oy * stride + dy) * w + (ox * stride + dx)) * c + ch;
              if (px[idx] > bv) {
                bv = px[idx];
                best = idx;
              }
            }
          }
          po[oi] = bv;
          (*argmax)[static_cast<std::size_t>(oi)] = best;
        }
      }
    }
  }
  check_finite(out, "maxpool2d");
  if (out.requires_grad) {
    tape.record([x, out, argmax]() mutable {
      if (!detail::wants_grad(x)) return;
      const T* g = out.grad_ptr();
      T* gx = x.grad_ptr();
      const std::int64_t total = out.numel();
      for (std::int64_t i = 0; i < total; ++i) gx[(*argmax)[static_cast<std::size_t>(i)]] += g[i];
    });
  }
  return out;
}

// [n, h, w, c] -> [n, c] mean over spatial positions.
template <class T>
Tensor<T> global_avgpool2d(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() != 4) throw DimError("global_avgpool2d: rank-4 required, got " + shape_str(x.shape));
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const int hw = h * w;
  Tensor<T> out = detail::make_out(tape, {n, c}, x.requires_grad);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int f = 0; f < n; ++f) {
    const T* xf = px + static_cast<std::int64_t>(f) * hw * c;
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int i = 0; i < hw; ++i) s += xf[static_cast<std::int64_t>(i) * c + ch];
      po[static_cast<std::int64_t>(f) * c + ch] = static_cast<T>(s / hw);
    }
  }
  check_finite(out, "global_avgpool2d");
  if (out.requires_grad) {
    tape.record([x, out, n, hw, c]() mutable {
      if (!detail::wants_grad(x)) return;
      const T* g = out.grad_ptr();
      T* gx = x.grad_ptr();
      const T inv = T(1) / static_cast<T>(hw);
      for (int f = 0; f < n; ++f)
        for (int i = 0; i < hw; ++i)
          for (int ch = 0; ch < c; ++ch)
            gx[(static_cast<std::int64_t>(f) * hw + i) * c + ch] += g[static_cast<std::int64_t>(f) * c + ch] * inv;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// gather / reshape ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> embedding_lookup(Tape<T>& tape, const Tensor<T>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw DimError("embedding_lookup: table must be rank-2, got " + shape_str(table.shape));
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw IndexError("embedding_lookup: id " + std::to_string(id) + " out of range [0," + std::to_string(v) + ")");
  const int u = static_cast<int>(ids.size());
  Tensor<T> out = detail::make_out(tape, {u, d}, table.requires_grad);
  auto idcopy = std::make_shared<std::vector<int>>(ids);
  const T* pt = table.ptr();
  T* po = out.ptr();
  for (int i = 0; i < u; ++i)
    std::copy(pt + static_cast<std::int64_t>(ids[static_cast<std::size_t>(i)]) * d,
              pt + static_cast<std::int64_t>(ids[static_cast<std::size_t>(i)]) * d + d,
              po + static_cast<std::int64_t>(i) * d);
  check_finite(out, "embedding_lookup");
  if (out.requires_grad) {
    tape.record([table, out, idcopy, u, d]() mutable {
      if (!detail::wants_grad(table)) return;
      const T* g = out.grad_ptr();
      T* gt = table.grad_ptr();
      for (int i = 0; i < u; ++i) {
        T* row = gt + static_cast<std::int64_t>((*idcopy)[static_cast<std::size_t>(i)]) * d;
        const T* gr = g + static_cast<std::int64_t>(i) * d;
        for (int j = 0; j < d; ++j) row[j] += gr[j];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_rows(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw DimError("concat_rows: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  const int ma = a.dim(0), mb = b.dim(0), n = a.dim(1);
  Tensor<T> out = detail::make_out(tape, {ma + mb, n}, a.requires_grad || b.requires_grad);
  std::copy(a.ptr(), a.ptr() + static_cast<std::int64_t>(ma) * n, out.ptr());
  std::copy(b.ptr(), b.ptr() + static_cast<std::int64_t>(mb) * n, out.ptr() + static_cast<std::int64_t>(ma) * n);
  if (out.requires_grad) {
    tape.record([a, b, out, ma, mb, n]() mutable {
      const T* g = out.grad_ptr();
      if (detail::wants_grad(a)) {
        T* ga = a.grad_ptr();
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(ma) * n; ++i) ga[i] += g[i];
      }
      if (detail::wants_grad(b)) {
        T* gb = b.grad_ptr();
        const T* gsrc = g + static_cast<std::int64_t>(ma) * n;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(mb) * n; ++i) gb[i] += gsrc[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> slice_rows(Tape<T>& tape, const Tensor<T>& x, int r0, int r1) {
  if (x.rank() != 2 || r0 < 0 || r1 > x.dim(0) || r0 >= r1)
    throw DimError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " + shape_str(x.shape));
  const int n = x.dim(1), m = r1 - r0;
  Tensor<T> out = detail::make_out(tape, {m, n}, x.requires_grad);
  std::copy(x.ptr() + static_cast<std::int64_t>(r0) * n, x.ptr() + static_cast<std::int64_t>(r1) * n, out.ptr());
  if (out.requires_grad) {
    tape.record([x, out, r0, m, n]() mutable {
      if (!detail::wants_grad(x)) return;
      const T* g = out.grad_ptr();
      T* gx = x.grad_ptr() + static_cast<std::int64_t>(r0) * n;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(m) * n; ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> slice_cols(Tape<T>& tape, const Tensor<T>& x, int c0, int c1) {
  if (x.rank() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1)
    throw DimError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " + shape_str(x.shape));
  const int m = x.dim(0), n = x.dim(1), w = c1 - c0;
  Tensor<T> out = detail::make_out(tape, {m, w}, x.requires_grad);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int i = 0; i < m; ++i)
    std::copy(px + static_cast<std::int64_t>(i) * n + c0, px + static_cast<std::int64_t>(i) * n + c1,
              po + static_cast<std::int64_t>(i) * w);
  if (out.requires_grad) {
    tape.record([x, out, c0, m, n, w]() mutable {
      if (!detail::wants_grad(x)) return;
      const T* g = out.grad_ptr();
      T* gx = x.grad_ptr();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) gx[static_cast<std::int64_t>(i) * n + c0 + j] += g[static_cast<std::int64_t>(i) * w + j];
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_cols(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimError("concat_cols: no inputs");
  const int m = parts[0].dim(0);
  int total = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m)
      throw DimError("concat_cols: row mismatch " + shape_str(parts[0].shape) + " vs " + shape_str(p.shape));
    total += p.dim(1);
    any_grad = any_grad || p.requires_grad;
  }
  Tensor<T> out = detail::make_out(tape, {m, total}, any_grad);
  T* po = out.ptr();
  int col = 0;
  for (const auto& p : parts) {
    const int w = p.dim(1);
    const T* pp = p.ptr();
    for (int i = 0; i < m; ++i)
      std::copy(pp + static_cast<std::int64_t>(i) * w, pp + static_cast<std::int64_t>(i) * w + w,
                po + static_cast<std::int64_t>(i) * total + col);
    col += w;
  }
  if (out.requires_grad) {
    auto parts_copy = std::make_shared<std::vector<Tensor<T>>>(parts);
    tape.record([parts_copy, out, m, total]() mutable {
      const T* g = out.grad_ptr();
      int col = 0;
      for (auto& p : *parts_copy) {
        const int w = p.dim(1);
        if (detail::wants_grad(p)) {
          T* gp = p.grad_ptr();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
              gp[static_cast<std::int64_t>(i) * w + j] += g[static_cast<std::int64_t>(i) * total + col + j];
        }
        col += w;
      }
    });
  }
  return out;
}

// Stack scalar-or-vector tensors into a matrix, one per row.
template <class T>
Tensor<T> stack_rows(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimError("stack_rows: no inputs");
  const int d = static_cast<int>(parts[0].numel());
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.numel() != d)
      throw DimError("stack_rows: width mismatch " + shape_str(parts[0].shape) + " vs " + shape_str(p.shape));
    any_grad = any_grad || p.requires_grad;
  }
  const int nrows = static_cast<int>(parts.size());
  Tensor<T> out = detail::make_out(tape, {nrows, d}, any_grad);
  for (int i = 0; i < nrows; ++i)
    std::copy(parts[static_cast<std::size_t>(i)].ptr(), parts[static_cast<std::size_t>(i)].ptr() + d,
              out.ptr() + static_cast<std::int64_t>(i) * d);
  if (out.requires_grad) {
    auto parts_copy = std::make_shared<std::vector<Tensor<T>>>(parts);
    tape.record([parts_copy, out, nrows, d]() mutable {
      const T* g = out.grad_ptr();
      for (int i = 0; i < nrows; ++i) {
        auto& p = (*parts_copy)[static_cast<std::size_t>(i)];
        if (!detail::wants_grad(p)) continue;
        T* gp = p.grad_ptr();
        for (int j = 0; j < d; ++j) gp[j] += g[static_cast<std::int64_t>(i) * d + j];
      }
    });
  }
  return out;
}

// out[i] = x[i, ids[i]]
template <class T>
Tensor<T> pick(Tape<T>& tape, const Tensor<T>& x, const std::vector<int>& ids) {
  if (x.rank() != 2 || static_cast<int>(ids.size()) != x.dim(0))
    throw DimError("pick: " + shape_str(x.shape) + " with " + std::to_string(ids.size()) + " ids");
  const int m = x.dim(0), n = x.dim(1);
  for (int id : ids)
    if (id < 0 || id >= n)
      throw IndexError("pick: id " + std::to_string(id) + " out of range [0," + std::to_string(n) + ")");
  Tensor<T> out = detail::make_out(tape, {m}, x.requires_grad);
  auto idcopy = std::make_shared<std::vector<int>>(ids);
  for (int i = 0; i < m; ++i)
    (*out.data)[static_cast<std::size_t>(i)] = (*x.data)[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])];
  if (out.requires_grad) {
    tape.record([x, out, idcopy, m, n]() mutable {
      if (!detail::wants_grad(x)) return;
      const T* g = out.grad_ptr();
      T* gx = x.grad_ptr();
      for (int i = 0; i < m; ++i)
        gx[static_cast<std::int64_t>(i) * n + (*idcopy)[static_cast<std::size_t>(i)]] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> row_sum(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() != 2) throw DimError("row_sum: rank-2 required, got " + shape_str(x.shape));
  const int m = x.dim(0), n = x.dim(1);
  Tensor<T> out = detail::make_out(tape, {m}, x.requires_grad);
  const T* px = x.ptr();
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += px[static_cast<std::int64_t>(i) * n + j];
    (*out.data)[static_cast<std::size_t>(i)] = static_cast<T>(s);
  }
  check_finite(out, "row_sum");
  if (out.requires_grad) {
    tape.record([x, out, m, n]() mutable {
      if (!detail::wants_grad(x)) return;
      const T* g = out.grad_ptr();
      T* gx = x.grad_ptr();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gx[static_cast<std::int64_t>(i) * n + j] += g[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> sum_all(Tape<T>& tape, const Tensor<T>& x) {
  const std::int64_t n = x.numel();
  Tensor<T> out = detail::make_out(tape, {1}, x.requires_grad);
  const T* px = x.ptr();
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += px[i];
  (*out.data)[0] = static_cast<T>(s);
  check_finite(out, "sum_all");
  if (out.requires_grad) {
    tape.record([x, out, n]() mutable {
      if (!detail::wants_grad(x)) return;
      const T g = (*out.grad)[0];
      T* gx = x.grad_ptr();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

template <class T>
Tensor<T> mean_all(Tape<T>& tape, const Tensor<T>& x) {
  const std::int64_t n = x.numel();
  Tensor<T> s = sum_all(tape, x);
  return mul_scalar(tape, s, 1.0 / static_cast<double>(n));
}

// Fixed-weight inner product: out = sum_i w[i] * x[i]; w is not differentiated.
template <class T>
Tensor<T> dot_const(Tape<T>& tape, const Tensor<T>& x, std::vector<T> weights) {
  if (x.numel() != static_cast<std::int64_t>(weights.size()))
    throw DimError("dot_const: " + shape_str(x.shape) + " with " + std::to_string(weights.size()) + " weights");
  const std::int64_t n = x.numel();
  Tensor<T> out = detail::make_out(tape, {1}, x.requires_grad);
  auto w = std::make_shared<std::vector<T>>(std::move(weights));
  const T* px = x.ptr();
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += static_cast<double>(px[i]) * (*w)[static_cast<std::size_t>(i)];
  (*out.data)[0] = static_cast<T>(s);
  check_finite(out, "dot_const");
  if (out.requires_grad) {
    tape.record([x, out, w, n]() mutable {
      if (!detail::wants_grad(x)) return;
      const T g = (*out.grad)[0];
      T* gx = x.grad_ptr();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g * (*w)[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// misc
// ---------------------------------------------------------------------------

// Normalize a vector (any shape, treated flat) to unit L2 norm.
template <class T>
Tensor<T> l2_normalize(Tape<T>& tape, const Tensor<T>& x) {
  const std::int64_t n = x.numel();
  const T* px = x.ptr();
  double sq = 0.0;
  for (std::int64_t i = 0; i < n; ++i) sq += static_cast<double>(px[i]) * px[i];
  const double norm = std::sqrt(sq);
  if (!(norm > 1e-12)) throw NumericError("l2_normalize: vector norm is zero");
  Tensor<T> out = detail::make_out(tape, x.shape, x.requires_grad);
  T* po = out.ptr();
  const double inv = 1.0 / norm;
  for (std::int64_t i = 0; i < n; ++i) po[i] = static_cast<T>(px[i] * inv);
  check_finite(out, "l2_normalize");
  if (out.requires_grad) {
    tape.record([x, out, n, inv]() mutable {
      if (!detail::wants_grad(x)) return;
      const T* y = out.ptr();
      const T* g = out.grad_ptr();
      T* gx = x.grad_ptr();
      double yg = 0.0;
      for (std::int64_t i = 0; i < n; ++i) yg += static_cast<double>(y[i]) * g[i];
      for (std::int64_t i = 0; i < n; ++i)
        gx[i] += static_cast<T>((static_cast<double>(g[i]) - static_cast<double>(y[i]) * yg) * inv);
    });
  }
  return out;
}

// y = min(exp(s), cap); gradient is zero once the clamp engages.
template <class T>
Tensor<T> exp_clamped(Tape<T>& tape, const Tensor<T>& s, double cap) {
  if (s.numel() != 1) throw DimError("exp_clamped: scalar required, got " + shape_str(s.shape));
  const double e = std::exp(static_cast<double>((*s.data)[0]));
  const bool clamped = e > cap;
  Tensor<T> out = detail::make_out(tape, {1}, s.requires_grad);
  (*out.data)[0] = static_cast<T>(clamped ? cap : e);
  check_finite(out, "exp_clamped");
  if (out.requires_grad) {
    tape.record([s, out, clamped]() mutable {
      if (!detail::wants_grad(s)) return;
      if (!clamped) (*s.grad)[0] += (*out.grad)[0] * (*out.data)[0];
    });
  }
  return out;
}

// Leaf helper: wrap constant values (no gradient) for masks, positional
// encodings and other fixed inputs.
template <class T>
Tensor<T> constant(std::vector<int> shape, std::vector<T> values) {
  return Tensor<T>::from_values(std::move(shape), std::move(values), false);
}

}  // namespace gfslt
