// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cardioclip::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

using Index = std::ptrdiff_t;

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const T* A = a.data();
  const T* B = b.data();
  T* C = c.data();
  const Index blocks = static_cast<Index>((m + 3) / 4);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (Index blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * 4;
    const std::size_t i1 = std::min(m, i0 + 4);
    if (!accumulate) std::fill(C + i0 * n, C + i1 * n, T{0});
    if (i1 - i0 == 4) {
      T* c0 = C + i0 * n;
      T* c1 = c0 + n;
      T* c2 = c1 + n;
      T* c3 = c2 + n;
      const T* a0 = A + i0 * k;
      const T* a1 = a0 + k;
      const T* a2 = a1 + k;
      const T* a3 = a2 + k;
      for (std::size_t p = 0; p < k; ++p) {
        const T* br = B + p * n;
        const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
#pragma omp simd
        for (std::size_t j = 0; j < n; ++j) {
          const T bj = br[j];
          c0[j] += x0 * bj;
          c1[j] += x1 * bj;
          c2[j] += x2 * bj;
          c3[j] += x3 * bj;
        }
      }
    } else {
      for (std::size_t i = i0; i < i1; ++i) {
        T* ci = C + i * n;
        const T* ai = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
          const T* br = B + p * n;
          const T x = ai[p];
#pragma omp simd
          for (std::size_t j = 0; j < n; ++j) ci[j] += x * br[j];
        }
      }
    }
  }
}

template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const T* A = a.data();
  const T* B = b.data();
  T* C = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (Index ii = 0; ii < static_cast<Index>(m); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const T* ai = A + i * k;
    T* ci = C + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = B + j * k;
      T s = 0;
#pragma omp simd reduction(+ : s)
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = accumulate ? ci[j] + s : s;
    }
  }
}

template <typename T>
void gemm_tn_acc(std::span<const T> a, std::span<const T> b, std::span<T> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  const T* A = a.data();
  const T* B = b.data();
  T* C = c.data();
  const Index blocks = static_cast<Index>((k + 3) / 4);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (Index blk = 0; blk < blocks; ++blk) {
    const std::size_t p0 = static_cast<std::size_t>(blk) * 4;
    const std::size_t p1 = std::min(k, p0 + 4);
    if (p1 - p0 == 4) {
      T* c0 = C + p0 * n;
      T* c1 = c0 + n;
      T* c2 = c1 + n;
      T* c3 = c2 + n;
      for (std::size_t i = 0; i < m; ++i) {
        const T* ai = A + i * k + p0;
        const T* bi = B + i * n;
        const T x0 = ai[0], x1 = ai[1], x2 = ai[2], x3 = ai[3];
#pragma omp simd
        for (std::size_t j = 0; j < n; ++j) {
          const T bj = bi[j];
          c0[j] += x0 * bj;
          c1[j] += x1 * bj;
          c2[j] += x2 * bj;
          c3[j] += x3 * bj;
        }
      }
    } else {
      for (std::size_t p = p0; p < p1; ++p) {
        T* cp = C + p * n;
        for (std::size_t i = 0; i < m; ++i) {
          const T x = A[i * k + p];
          const T* bi = B + i * n;
#pragma omp simd
          for (std::size_t j = 0; j < n; ++j) cp[j] += x * bi[j];
        }
      }
    }
  }
}

template <typename T>
void add_row_bias(std::span<T> x, std::span<const T> bias, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    T* xr = x.data() + static_cast<std::size_t>(r) * cols;
#pragma omp simd
    for (std::size_t j = 0; j < cols; ++j) xr[j] += bias[j];
  }
}

template <typename T>
void col_sum_acc(std::span<const T> x, std::span<T> out, std::size_t rows, std::size_t cols) {
  // Parallel over columns keeps each output on a single thread.
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (Index jj = 0; jj < static_cast<Index>(cols); ++jj) {
    const std::size_t j = static_cast<std::size_t>(jj);
    T s = 0;
    for (std::size_t r = 0; r < rows; ++r) s += x[r * cols + j];
    out[j] += s;
  }
}

template <typename T>
void softmax_rows(std::span<T> x, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    T* xr = x.data() + static_cast<std::size_t>(r) * cols;
    T mx = xr[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    T s = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      xr[j] = std::exp(xr[j] - mx);
      s += xr[j];
    }
    const T inv = T{1} / s;
    for (std::size_t j = 0; j < cols; ++j) xr[j] *= inv;
  }
}

template <typename T>
void softmax_rows_backward(std::span<const T> p, std::span<const T> dp, std::span<T> dx,
                           std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * cols;
    T dot = 0;
#pragma omp simd reduction(+ : dot)
    for (std::size_t j = 0; j < cols; ++j) dot += p[off + j] * dp[off + j];
    for (std::size_t j = 0; j < cols; ++j) dx[off + j] = p[off + j] * (dp[off + j] - dot);
  }
}

template <typename T>
void layernorm_forward(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta,
                       std::span<T> y, std::span<T> xhat, std::span<T> rstd,
                       std::size_t rows, std::size_t cols, T eps) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (Index rr = 0; rr < static_cast<Index>(rows); ++rr) {
    const std::size_t r = static_cast<std::size_t>(rr);
    const T* xr = x.data() + r * cols;
    T mean = 0;
#pragma omp simd reduction(+ : mean)
    for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
    mean /= static_cast<T>(cols);
    T var = 0;
#pragma omp simd reduction(+ : var)
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(cols);
    const T rs = T{1} / std::sqrt(var + eps);
    rstd[r] = rs;
    T* hr = xhat.data() + r * cols;
    T* yr = y.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      hr[j] = (xr[j] - mean) * rs;
      yr[j] = gamma[j] * hr[j] + beta[j];
    }
  }
}

template <typename T>
void layernorm_backward(std::span<const T> dy, std::span<const T> xhat, std::span<const T> rstd,
                        std::span<const T> gamma, std::span<T> dx, std::span<T> dgamma,
                        std::span<T> dbeta, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (Index rr = 0; rr < static_cast<Index>(rows); ++rr) {
    const std::size_t r = static_cast<std::size_t>(rr);
    const T* dyr = dy.data() + r * cols;
    const T* hr = xhat.data() + r * cols;
    T mg = 0, mgh = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      const T g = dyr[j] * gamma[j];
      mg += g;
      mgh += g * hr[j];
    }
    mg /= static_cast<T>(cols);
    mgh /= static_cast<T>(cols);
    T* dxr = dx.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      dxr[j] = rstd[r] * (dyr[j] * gamma[j] - mg - hr[j] * mgh);
    }
  }
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (Index jj = 0; jj < static_cast<Index>(cols); ++jj) {
    const std::size_t j = static_cast<std::size_t>(jj);
    T sg = 0, sb = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      sg += dy[r * cols + j] * xhat[r * cols + j];
      sb += dy[r * cols + j];
    }
    dgamma[j] += sg;
    dbeta[j] += sb;
  }
}

template <typename T>
void gelu_forward(std::span<const T> x, std::span<T> y) {
  const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
#pragma omp parallel for schedule(static) if (x.size() > kParallelWork)
  for (Index i = 0; i < static_cast<Index>(x.size()); ++i) {
    const T v = x[static_cast<std::size_t>(i)];
    y[static_cast<std::size_t>(i)] = T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2));
  }
}

template <typename T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx) {
  const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  const T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
#pragma omp parallel for schedule(static) if (x.size() > kParallelWork)
  for (Index ii = 0; ii < static_cast<Index>(x.size()); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const T v = x[i];
    const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
    const T pdf = inv_sqrt2pi * std::exp(T{-0.5} * v * v);
    dx[i] = dy[i] * (cdf + v * pdf);
  }
}

#define CARDIOCLIP_INSTANTIATE_KERNELS(T)                                                        \
  template void gemm_nn<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,    \
                           std::size_t, std::size_t, bool);                                      \
  template void gemm_nt<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,    \
                           std::size_t, std::size_t, bool);                                      \
  template void gemm_tn_acc<T>(std::span<const T>, std::span<const T>, std::span<T>,             \
                               std::size_t, std::size_t, std::size_t);                           \
  template void add_row_bias<T>(std::span<T>, std::span<const T>, std::size_t, std::size_t);     \
  template void col_sum_acc<T>(std::span<const T>, std::span<T>, std::size_t, std::size_t);      \
  template void softmax_rows<T>(std::span<T>, std::size_t, std::size_t);                         \
  template void softmax_rows_backward<T>(std::span<const T>, std::span<const T>, std::span<T>,   \
                                         std::size_t, std::size_t);                              \
  template void layernorm_forward<T>(std::span<const T>, std::span<const T>, std::span<const T>, \
                                     std::span<T>, std::span<T>, std::span<T>, std::size_t,      \
                                     std::size_t, T);                                            \
  template void layernorm_backward<T>(std::span<const T>, std::span<const T>,                    \
                                      std::span<const T>, std::span<const T>, std::span<T>,      \
                                      std::span<T>, std::span<T>, std::size_t, std::size_t);     \
  template void gelu_forward<T>(std::span<const T>, std::span<T>);                               \
  template void gelu_backward<T>(std::span<const T>, std::span<const T>, std::span<T>);

CARDIOCLIP_INSTANTIATE_KERNELS(float)
CARDIOCLIP_INSTANTIATE_KERNELS(double)

}  // namespace cardioclip::kernels
