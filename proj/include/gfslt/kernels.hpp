#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gfslt::kernels {

// Parallel dispatch. Every kernel computes each output row with a fixed
// sequential accumulation order, so results are bitwise identical whether a
// loop runs serially or split across OpenMP threads, at any thread count.
bool parallel_enabled();
void set_parallel_enabled(bool on);

inline bool in_parallel_region() {
#ifdef _OPENMP
  return omp_in_parallel() != 0;
#else
  return false;
#endif
}

constexpr std::int64_t kParallelGrain = 1 << 15;

template <class F>
void for_rows(int rows, std::int64_t work_per_row, F&& body) {
#ifdef _OPENMP
  if (parallel_enabled() && !in_parallel_region() && rows > 1 &&
      work_per_row * rows >= kParallelGrain) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) body(i);
    return;
  }
#endif
  (void)work_per_row;
  for (int i = 0; i < rows; ++i) body(i);
}

// y[0:n] += a * x[0:n]; the inner loop of most kernels.
template <class T>
inline void axpy(int n, T a, const T* x, T* y) {
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

// Dot product with four independent accumulators combined in a fixed order.
template <class T>
inline T dot(int n, const T* a, const T* b) {
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  T s = (s0 + s1) + (s2 + s3);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// c[m,n] = a[m,k] * b[k,n]  (+= when accumulate)
template <class T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  for_rows(m, static_cast<std::int64_t>(k) * n, [=](int i) {
    T* crow = c + static_cast<std::int64_t>(i) * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    const T* arow = a + static_cast<std::int64_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      if (av != T(0)) axpy(n, av, b + static_cast<std::int64_t>(kk) * n, crow);
    }
  });
}

// c[m,n] = a[m,k] * b[n,k]^T
template <class T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  for_rows(m, static_cast<std::int64_t>(k) * n, [=](int i) {
    const T* arow = a + static_cast<std::int64_t>(i) * k;
    T* crow = c + static_cast<std::int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T v = dot(k, arow, b + static_cast<std::int64_t>(j) * k);
      if (accumulate) crow[j] += v; else crow[j] = v;
    }
  });
}

// c[k,n] = a[m,k]^T * b[m,n]
template <class T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  for_rows(k, static_cast<std::int64_t>(m) * n, [=](int kk) {
    T* crow = c + static_cast<std::int64_t>(kk) * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    for (int i = 0; i < m; ++i) {
      const T av = a[static_cast<std::int64_t>(i) * k + kk];
      if (av != T(0)) axpy(n, av, b + static_cast<std::int64_t>(i) * n, crow);
    }
  });
}

// Row-wise softmax over x[rows, n] with max subtraction; sums accumulate in double.
template <class T>
void softmax_rows(const T* x, T* y, int rows, int n) {
  for_rows(rows, 4LL * n, [=](int r) {
    const T* xr = x + static_cast<std::int64_t>(r) * n;
    T* yr = y + static_cast<std::int64_t>(r) * n;
    T mx = xr[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(static_cast<double>(xr[j]) - static_cast<double>(mx));
      yr[j] = static_cast<T>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < n; ++j) yr[j] = static_cast<T>(static_cast<double>(yr[j]) * inv);
  });
}

template <class T>
void log_softmax_rows(const T* x, T* y, int rows, int n) {
  for_rows(rows, 4LL * n, [=](int r) {
    const T* xr = x + static_cast<std::int64_t>(r) * n;
    T* yr = y + static_cast<std::int64_t>(r) * n;
    T mx = xr[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j)
      sum += std::exp(static_cast<double>(xr[j]) - static_cast<double>(mx));
    const double lse = static_cast<double>(mx) + std::log(sum);
    for (int j = 0; j < n; ++j) yr[j] = static_cast<T>(static_cast<double>(xr[j]) - lse);
  });
}

// Per-row layer norm over width d; statistics in double. Writes normalized
// values (pre-affine) to xhat and 1/sqrt(var+eps) to inv_std for the backward.
template <class T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* inv_std,
                     int rows, int d, double eps) {
  for_rows(rows, 6LL * d, [=](int r) {
    const T* xr = x + static_cast<std::int64_t>(r) * d;
    T* yr = y + static_cast<std::int64_t>(r) * d;
    T* hr = xhat + static_cast<std::int64_t>(r) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<T>(inv);
    for (int j = 0; j < d; ++j) {
      const double h = (xr[j] - mean) * inv;
      hr[j] = static_cast<T>(h);
      yr[j] = static_cast<T>(h * gain[j] + bias[j]);
    }
  });
}

template <class T>
void layer_norm_backward_rows(const T* dy, const T* gain, const T* xhat, const T* inv_std,
                              T* dx, int rows, int d) {
  for_rows(rows, 8LL * d, [=](int r) {
    const T* dyr = dy + static_cast<std::int64_t>(r) * d;
    const T* hr = xhat + static_cast<std::int64_t>(r) * d;
    T* dxr = dx + static_cast<std::int64_t>(r) * d;
    double s1 = 0.0, s2 = 0.0;
    for (int j = 0; j < d; ++j) {
      const double g = static_cast<double>(dyr[j]) * gain[j];
      s1 += g;
      s2 += g * hr[j];
    }
    s1 /= d;
    s2 /= d;
    const double inv = inv_std[r];
    for (int j = 0; j < d; ++j) {
      const double g = static_cast<double>(dyr[j]) * gain[j];
      dxr[j] += static_cast<T>((g - s1 - hr[j] * s2) * inv);
    }
  });
}

// conv1d, cross-correlation: x[t_in, c_in], w[k, c_in, c_out] -> y[t_out, c_out]
template <class T>
void conv1d_forward(const T* x, const T* w, T* y, int t_in, int c_in, int k, int c_out,
                    int stride, int pad, int t_out) {
  for_rows(t_out, static_cast<std::int64_t>(k) * c_in * c_out, [=](int t) {
    T* yr = y + static_cast<std::int64_t>(t) * c_out;
    std::fill(yr, yr + c_out, T(0));
    for (int j = 0; j < k; ++j) {
      const int ti = t * stride + j - pad;
      if (ti < 0 || ti >= t_in) continue;
      const T* xr = x + static_cast<std::int64_t>(ti) * c_in;
      const T* wj = w + static_cast<std::int64_t>(j) * c_in * c_out;
      for (int i = 0; i < c_in; ++i)
        if (xr[i] != T(0)) axpy(c_out, xr[i], wj + static_cast<std::int64_t>(i) * c_out, yr);
    }
  });
}

// Input gradient, parallel over input rows so writes never collide.
template <class T>
void conv1d_backward_x(const T* dy, const T* w, T* dx, int t_in, int c_in, int k, int c_out,
                       int stride, int pad, int t_out) {
  for_rows(t_in, static_cast<std::int64_t>(k) * c_in * c_out, [=](int ti) {
    T* dxr = dx + static_cast<std::int64_t>(ti) * c_in;
    for (int j = 0; j < k; ++j) {
      const int num = ti + pad - j;
      if (num < 0 || num % stride != 0) continue;
      const int t = num / stride;
      if (t >= t_out) continue;
      const T* dyr = dy + static_cast<std::int64_t>(t) * c_out;
      const T* wj = w + static_cast<std::int64_t>(j) * c_in * c_out;
      for (int i = 0; i < c_in; ++i)
        dxr[i] += dot(c_out, dyr, wj + static_cast<std::int64_t>(i) * c_out);
    }
  });
}

// Weight gradient, parallel over (j, c_in) rows of dw.
template <class T>
void conv1d_backward_w(const T* x, const T* dy, T* dw, int t_in, int c_in, int k, int c_out,
                       int stride, int pad, int t_out) {
  for_rows(k * c_in, static_cast<std::int64_t>(t_out) * c_out, [=](int ji) {
    const int j = ji / c_in;
    const int i = ji % c_in;
    T* dwr = dw + static_cast<std::int64_t>(ji) * c_out;
    for (int t = 0; t < t_out; ++t) {
      const int ti = t * stride + j - pad;
      if (ti < 0 || ti >= t_in) continue;
      const T xv = x[static_cast<std::int64_t>(ti) * c_in + i];
      if (xv != T(0)) axpy(c_out, xv, dy + static_cast<std::int64_t>(t) * c_out, dwr);
    }
  });
}

// conv2d over a batch of frames: x[n, h, w, c_in], w[kh, kw, c_in, c_out].
template <class T>
void conv2d_forward(const T* x, const T* wt, T* y, int n, int h, int w, int c_in, int kh, int kw,
                    int c_out, int stride, int pad, int h_out, int w_out) {
  const std::int64_t in_frame = static_cast<std::int64_t>(h) * w * c_in;
  const std::int64_t out_frame = static_cast<std::int64_t>(h_out) * w_out * c_out;
  for_rows(n, out_frame * kh * kw * c_in, [=](int f) {
    const T* xf = x + f * in_frame;
    T* yf = y + f * out_frame;
    std::fill(yf, yf + out_frame, T(0));
    for (int oy = 0; oy < h_out; ++oy) {
      for (int ox = 0; ox < w_out; ++ox) {
        T* yr = yf + (static_cast<std::int64_t>(oy) * w_out + ox) * c_out;
        for (int dy = 0; dy < kh; ++dy) {
          const int iy = oy * stride + dy - pad;
          if (iy < 0 || iy >= h) continue;
          for (int dx = 0; dx < kw; ++dx) {
            const int ix = ox * stride + dx - pad;
            if (ix < 0 || ix >= w) continue;
            const T* xr = xf + (static_cast<std::int64_t>(iy) * w + ix) * c_in;
            const T* wr = wt + ((static_cast<std::int64_t>(dy) * kw + dx) * c_in) * c_out;
            for (int i = 0; i < c_in; ++i)
              if (xr[i] != T(0)) axpy(c_out, xr[i], wr + static_cast<std::int64_t>(i) * c_out, yr);
          }
        }
      }
    }
  });
}

template <class T>
void conv2d_backward_x(const T* dy, const T* wt, T* dx, int n, int h, int w, int c_in, int kh,
                       int kw, int c_out, int stride, int pad, int h_out, int w_out) {
  const std::int64_t in_frame = static_cast<std::int64_t>(h) * w * c_in;
  const std::int64_t out_frame = static_cast<std::int64_t>(h_out) * w_out * c_out;
  for_rows(n, out_frame * kh * kw * c_in, [=](int f) {
    const T* dyf = dy + f * out_frame;
    T* dxf = dx + f * in_frame;
    for (int oy = 0; oy < h_out; ++oy) {
      for (int ox = 0; ox < w_out; ++ox) {
        const T* dyr = dyf + (static_cast<std::int64_t>(oy) * w_out + ox) * c_out;
        for (int ddy = 0; ddy < kh; ++ddy) {
          const int iy = oy * stride + ddy - pad;
          if (iy < 0 || iy >= h) continue;
          for (int ddx = 0; ddx < kw; ++ddx) {
            const int ix = ox * stride + ddx - pad;
            if (ix < 0 || ix >= w) continue;
            T* dxr = dxf + (static_cast<std::int64_t>(iy) * w + ix) * c_in;
            const T* wr = wt + ((static_cast<std::int64_t>(ddy) * kw + ddx) * c_in) * c_out;
            for (int i = 0; i < c_in; ++i)
              dxr[i] += dot(c_out, dyr, wr + static_cast<std::int64_t>(i) * c_out);
          }
        }
      }
    }
  });
}

template <class T>
void conv2d_backward_w(const T* x, const T* dy, T* dw, int n, int h, int w, int c_in, int kh,
                       int kw, int c_out, int stride, int pad, int h_out, int w_out) {
  const std::int64_t in_frame = static_cast<std::int64_t>(h) * w * c_in;
  const std::int64_t out_frame = static_cast<std::int64_t>(h_out) * w_out * c_out;
  for_rows(kh * kw * c_in, static_cast<std::int64_t>(n) * h_out * w_out * c_out, [=](int row) {
    const int dyk = row / (kw * c_in);
    const int rem = row % (kw * c_in);
    const int dxk = rem / c_in;
    const int i = rem % c_in;
    T* dwr = dw + static_cast<std::int64_t>(row) * c_out;
    for (int f = 0; f < n; ++f) {
      const T* xf = x + f * in_frame;
      const T* dyf = dy + f * out_frame;
      for (int oy = 0; oy < h_out; ++oy) {
        const int iy = oy * stride + dyk - pad;
        if (iy < 0 || iy >= h) continue;
        for (int ox = 0; ox < w_out; ++ox) {
          const int ix = ox * stride + dxk - pad;
          if (ix < 0 || ix >= w) continue;
          const T xv = xf[(static_cast<std::int64_t>(iy) * w + ix) * c_in + i];
          if (xv != T(0))
            axpy(c_out, xv, dyf + (static_cast<std::int64_t>(oy) * w_out + ox) * c_out, dwr);
        }
      }
    }
  });
}

}  // namespace gfslt::kernels
