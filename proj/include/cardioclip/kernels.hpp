// SPDX-License-Identifier: Apache-2.0
//
// Dense kernels used by the encoders. Every kernel exists twice: the
// OpenMP version in `kernels` (used by the models) and a plain loop version
// in `kernels::serial` kept as the reference for tests and benchmarks.
//
// Parallel kernels split work over output rows only, so each output element
// is produced by one thread with a fixed summation order. Results are
// therefore identical for any thread count.
#pragma once

#include <cstddef>
#include <span>

namespace cardioclip::kernels {

// c[m x n] = a[m x k] * b[k x n]   (c += ... when accumulate)
template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// c[m x n] = a[m x k] * b[n x k]^T
template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// c[k x n] += a[m x k]^T * b[m x n]
template <typename T>
void gemm_tn_acc(std::span<const T> a, std::span<const T> b, std::span<T> c,
                 std::size_t m, std::size_t k, std::size_t n);

// x[r, :] += bias
template <typename T>
void add_row_bias(std::span<T> x, std::span<const T> bias, std::size_t rows, std::size_t cols);

// out[:] += sum over rows of x
template <typename T>
void col_sum_acc(std::span<const T> x, std::span<T> out, std::size_t rows, std::size_t cols);

// In-place max-subtracted softmax of every row.
template <typename T>
void softmax_rows(std::span<T> x, std::size_t rows, std::size_t cols);

// dx = p * (dp - <dp, p>) row-wise; dp and p are rows x cols.
template <typename T>
void softmax_rows_backward(std::span<const T> p, std::span<const T> dp, std::span<T> dx,
                           std::size_t rows, std::size_t cols);

// y = gamma * (x - mean) * rstd + beta. Writes the normalized input to xhat
// and the per-row reciprocal std to rstd.
template <typename T>
void layernorm_forward(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta,
                       std::span<T> y, std::span<T> xhat, std::span<T> rstd,
                       std::size_t rows, std::size_t cols, T eps);

// dx = rstd * (g - mean(g) - xhat * mean(g * xhat)) with g = dy * gamma.
// dgamma and dbeta accumulate.
template <typename T>
void layernorm_backward(std::span<const T> dy, std::span<const T> xhat, std::span<const T> rstd,
                        std::span<const T> gamma, std::span<T> dx, std::span<T> dgamma,
                        std::span<T> dbeta, std::size_t rows, std::size_t cols);

// Exact (erf) GELU.
template <typename T>
void gelu_forward(std::span<const T> x, std::span<T> y);

template <typename T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx);

namespace serial {

template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
template <typename T>
void gemm_tn_acc(std::span<const T> a, std::span<const T> b, std::span<T> c,
                 std::size_t m, std::size_t k, std::size_t n);
template <typename T>
void add_row_bias(std::span<T> x, std::span<const T> bias, std::size_t rows, std::size_t cols);
template <typename T>
void col_sum_acc(std::span<const T> x, std::span<T> out, std::size_t rows, std::size_t cols);
template <typename T>
void softmax_rows(std::span<T> x, std::size_t rows, std::size_t cols);
template <typename T>
void softmax_rows_backward(std::span<const T> p, std::span<const T> dp, std::span<T> dx,
                           std::size_t rows, std::size_t cols);
template <typename T>
void layernorm_forward(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta,
                       std::span<T> y, std::span<T> xhat, std::span<T> rstd,
                       std::size_t rows, std::size_t cols, T eps);
template <typename T>
void layernorm_backward(std::span<const T> dy, std::span<const T> xhat, std::span<const T> rstd,
                        std::span<const T> gamma, std::span<T> dx, std::span<T> dgamma,
                        std::span<T> dbeta, std::size_t rows, std::size_t cols);
template <typename T>
void gelu_forward(std::span<const T> x, std::span<T> y);
template <typename T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx);

}  // namespace serial

/// Number of OpenMP threads kernels will use (1 when built without OpenMP).
int max_threads();

}  // namespace cardioclip::kernels
