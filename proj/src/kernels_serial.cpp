// SPDX-License-Identifier: Apache-2.0
//
// Textbook loop versions of every kernel. No OpenMP, no blocking.
#include <cmath>
#include <cstddef>

#include "cardioclip/kernels.hpp"

namespace cardioclip::kernels::serial {

template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

template <typename T>
void gemm_tn_acc(std::span<const T> a, std::span<const T> b, std::span<T> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t i = 0; i < m; ++i) s += a[i * k + p] * b[i * n + j];
      c[p * n + j] += s;
    }
  }
}

template <typename T>
void add_row_bias(std::span<T> x, std::span<const T> bias, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) x[r * cols + j] += bias[j];
}

template <typename T>
void col_sum_acc(std::span<const T> x, std::span<T> out, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) out[j] += x[r * cols + j];
}

template <typename T>
void softmax_rows(std::span<T> x, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* xr = x.data() + r * cols;
    T mx = xr[0];
    for (std::size_t j = 1; j < cols; ++j)
      if (xr[j] > mx) mx = xr[j];
    T s = 0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(xr[j] - mx);
    for (std::size_t j = 0; j < cols; ++j) xr[j] = std::exp(xr[j] - mx) / s;
  }
}

template <typename T>
void softmax_rows_backward(std::span<const T> p, std::span<const T> dp, std::span<T> dx,
                           std::size_t rows, std::size_t cols) {
  // Full Jacobian-vector product: dx_j = sum_i dp_i * p_i * (delta_ij - p_j).
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      T s = 0;
      for (std::size_t i = 0; i < cols; ++i) {
        const T jac = p[off + i] * ((i == j ? T{1} : T{0}) - p[off + j]);
        s += dp[off + i] * jac;
      }
      dx[off + j] = s;
    }
  }
}

template <typename T>
void layernorm_forward(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta,
                       std::span<T> y, std::span<T> xhat, std::span<T> rstd,
                       std::size_t rows, std::size_t cols, T eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    T mean = 0;
    for (std::size_t j = 0; j < cols; ++j) mean += x[r * cols + j];
    mean /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      const T d = x[r * cols + j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(cols);
    rstd[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) {
      xhat[r * cols + j] = (x[r * cols + j] - mean) * rstd[r];
      y[r * cols + j] = gamma[j] * xhat[r * cols + j] + beta[j];
    }
  }
}

template <typename T>
void layernorm_backward(std::span<const T> dy, std::span<const T> xhat, std::span<const T> rstd,
                        std::span<const T> gamma, std::span<T> dx, std::span<T> dgamma,
                        std::span<T> dbeta, std::size_t rows, std::size_t cols) {
  const T n = static_cast<T>(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    T sum_g = 0, sum_gh = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      const T g = dy[r * cols + j] * gamma[j];
      sum_g += g;
      sum_gh += g * xhat[r * cols + j];
    }
    for (std::size_t j = 0; j < cols; ++j) {
      const T g = dy[r * cols + j] * gamma[j];
      dx[r * cols + j] = rstd[r] * (g - sum_g / n - xhat[r * cols + j] * sum_gh / n);
      dgamma[j] += dy[r * cols + j] * xhat[r * cols + j];
      dbeta[j] += dy[r * cols + j];
    }
  }
}

template <typename T>
void gelu_forward(std::span<const T> x, std::span<T> y) {
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = T{0.5} * x[i] * (T{1} + std::erf(x[i] / std::sqrt(T{2})));
}

template <typename T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx) {
  const T pi = static_cast<T>(3.14159265358979323846);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T cdf = T{0.5} * (T{1} + std::erf(x[i] / std::sqrt(T{2})));
    const T pdf = std::exp(-x[i] * x[i] / T{2}) / std::sqrt(T{2} * pi);
    dx[i] = dy[i] * (cdf + x[i] * pdf);
  }
}

#define CARDIOCLIP_INSTANTIATE_SERIAL(T)                                                         \
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

CARDIOCLIP_INSTANTIATE_SERIAL(float)
CARDIOCLIP_INSTANTIATE_SERIAL(double)

}  // namespace cardioclip::kernels::serial
