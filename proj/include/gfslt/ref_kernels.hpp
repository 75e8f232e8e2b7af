#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace gfslt::refk {

// Plain textbook loops, kept as the reference the dispatched kernels are
// tested and benchmarked against. No parallelism, no blocking, no manual
// accumulator splitting; accumulation order therefore differs from the
// production kernels and comparisons use tolerances.

template <class T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int kk = 0; kk < k; ++kk)
        s += static_cast<double>(a[static_cast<std::int64_t>(i) * k + kk]) *
             static_cast<double>(b[static_cast<std::int64_t>(kk) * n + j]);
      c[static_cast<std::int64_t>(i) * n + j] = static_cast<T>(s);
    }
  }
}

template <class T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int kk = 0; kk < k; ++kk)
        s += static_cast<double>(a[static_cast<std::int64_t>(i) * k + kk]) *
             static_cast<double>(b[static_cast<std::int64_t>(j) * k + kk]);
      c[static_cast<std::int64_t>(i) * n + j] = static_cast<T>(s);
    }
  }
}

template <class T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int kk = 0; kk < k; ++kk) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < m; ++i)
        s += static_cast<double>(a[static_cast<std::int64_t>(i) * k + kk]) *
             static_cast<double>(b[static_cast<std::int64_t>(i) * n + j]);
      c[static_cast<std::int64_t>(kk) * n + j] = static_cast<T>(s);
    }
  }
}

template <class T>
void conv1d_forward(const T* x, const T* w, T* y, int t_in, int c_in, int k, int c_out, int stride,
                    int pad, int t_out) {
  for (int t = 0; t < t_out; ++t) {
    for (int o = 0; o < c_out; ++o) {
      double s = 0.0;
      for (int j = 0; j < k; ++j) {
        const int ti = t * stride + j - pad;
        if (ti < 0 || ti >= t_in) continue;
        for (int i = 0; i < c_in; ++i)
          s += static_cast<double>(x[static_cast<std::int64_t>(ti) * c_in + i]) *
               static_cast<double>(w[(static_cast<std::int64_t>(j) * c_in + i) * c_out + o]);
      }
      y[static_cast<std::int64_t>(t) * c_out + o] = static_cast<T>(s);
    }
  }
}

template <class T>
void conv2d_forward(const T* x, const T* wt, T* y, int n, int h, int w, int c_in, int kh, int kw,
                    int c_out, int stride, int pad, int h_out, int w_out) {
  for (int f = 0; f < n; ++f) {
    for (int oy = 0; oy < h_out; ++oy) {
      for (int ox = 0; ox < w_out; ++ox) {
        for (int o = 0; o < c_out; ++o) {
          double s = 0.0;
          for (int dy = 0; dy < kh; ++dy) {
            const int iy = oy * stride + dy - pad;
            if (iy < 0 || iy >= h) continue;
            for (int dx = 0; dx < kw; ++dx) {
              const int ix = ox * stride + dx - pad;
              if (ix < 0 || ix >= w) continue;
              for (int i = 0; i < c_in; ++i)
                s += static_cast<double>(
                         x[((static_cast<std::int64_t>(f) * h + iy) * w + ix) * c_in + i]) *
                     static_cast<double>(
                         wt[((static_cast<std::int64_t>(dy) * kw + dx) * c_in + i) * c_out + o]);
            }
          }
          y[((static_cast<std::int64_t>(f) * h_out + oy) * w_out + ox) * c_out + o] = static_cast<T>(s);
        }
      }
    }
  }
}

template <class T>
void softmax_rows(const T* x, T* y, int rows, int n) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<std::int64_t>(r) * n;
    T* yr = y + static_cast<std::int64_t>(r) * n;
    double mx = xr[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(xr[j]));
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += std::exp(static_cast<double>(xr[j]) - mx);
    for (int j = 0; j < n; ++j)
      yr[j] = static_cast<T>(std::exp(static_cast<double>(xr[j]) - mx) / sum);
  }
}

template <class T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, int rows, int d, double eps) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<std::int64_t>(r) * d;
    T* yr = y + static_cast<std::int64_t>(r) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= d;
    for (int j = 0; j < d; ++j)
      yr[j] = static_cast<T>((xr[j] - mean) / std::sqrt(var + eps) * gain[j] + bias[j]);
  }
}

}  // namespace gfslt::refk
