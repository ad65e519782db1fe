// SPDX-License-Identifier: Apache-2.0
//
// OpenMP kernels against their serial reference. Thread count follows
// OMP_NUM_THREADS.
#include <benchmark/benchmark.h>

#include <vector>

#include "cardioclip/kernels.hpp"
#include "cardioclip/rng.hpp"

namespace k = cardioclip::kernels;

namespace {

std::vector<float> random_buffer(std::size_t n, std::uint64_t seed) {
  cardioclip::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

// Shapes from the default visual encoder: 65 tokens, width 128, MLP 512.
template <bool Parallel>
void BM_gemm_nn(benchmark::State& state) {
  const auto m = std::size_t(state.range(0)), kk = std::size_t(state.range(1)), n = std::size_t(state.range(2));
  const auto a = random_buffer(m * kk, 1), b = random_buffer(kk * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::gemm_nn<float>(a, b, c, m, kk, n);
    else k::serial::gemm_nn<float>(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(2 * m * kk * n));
}

template <bool Parallel>
void BM_gemm_nt(benchmark::State& state) {
  const auto m = std::size_t(state.range(0)), kk = std::size_t(state.range(1)), n = std::size_t(state.range(2));
  const auto a = random_buffer(m * kk, 3), b = random_buffer(n * kk, 4);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::gemm_nt<float>(a, b, c, m, kk, n);
    else k::serial::gemm_nt<float>(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(2 * m * kk * n));
}

template <bool Parallel>
void BM_gemm_tn_acc(benchmark::State& state) {
  const auto m = std::size_t(state.range(0)), kk = std::size_t(state.range(1)), n = std::size_t(state.range(2));
  const auto a = random_buffer(m * kk, 5), b = random_buffer(m * n, 6);
  std::vector<float> c(kk * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::gemm_tn_acc<float>(a, b, c, m, kk, n);
    else k::serial::gemm_tn_acc<float>(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(2 * m * kk * n));
}

template <bool Parallel>
void BM_softmax(benchmark::State& state) {
  const auto rows = std::size_t(state.range(0)), cols = std::size_t(state.range(1));
  const auto src = random_buffer(rows * cols, 7);
  auto x = src;
  for (auto _ : state) {
    x = src;
    if constexpr (Parallel) k::softmax_rows<float>(x, rows, cols);
    else k::serial::softmax_rows<float>(x, rows, cols);
    benchmark::DoNotOptimize(x.data());
  }
}

template <bool Parallel>
void BM_layernorm(benchmark::State& state) {
  const auto rows = std::size_t(state.range(0)), cols = std::size_t(state.range(1));
  const auto x = random_buffer(rows * cols, 8);
  std::vector<float> gamma(cols, 1.0f), beta(cols, 0.0f), y(rows * cols), xhat(rows * cols), rstd(rows);
  for (auto _ : state) {
    if constexpr (Parallel) k::layernorm_forward<float>(x, gamma, beta, y, xhat, rstd, rows, cols, 1e-5f);
    else k::serial::layernorm_forward<float>(x, gamma, beta, y, xhat, rstd, rows, cols, 1e-5f);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_gelu(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const auto x = random_buffer(n, 9);
  std::vector<float> y(n);
  for (auto _ : state) {
    if constexpr (Parallel) k::gelu_forward<float>(x, y);
    else k::serial::gelu_forward<float>(x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void gemm_shapes(benchmark::internal::Benchmark* b) {
  b->Args({65, 128, 128})->Args({65, 128, 512})->Args({65, 512, 128})->Args({1040, 128, 512});
}

}  // namespace

BENCHMARK(BM_gemm_nn<true>)->Apply(gemm_shapes)->Name("gemm_nn/omp");
BENCHMARK(BM_gemm_nn<false>)->Apply(gemm_shapes)->Name("gemm_nn/serial");
BENCHMARK(BM_gemm_nt<true>)->Apply(gemm_shapes)->Name("gemm_nt/omp");
BENCHMARK(BM_gemm_nt<false>)->Apply(gemm_shapes)->Name("gemm_nt/serial");
BENCHMARK(BM_gemm_tn_acc<true>)->Apply(gemm_shapes)->Name("gemm_tn_acc/omp");
BENCHMARK(BM_gemm_tn_acc<false>)->Apply(gemm_shapes)->Name("gemm_tn_acc/serial");
BENCHMARK(BM_softmax<true>)->Args({260, 65})->Args({1040, 1040})->Name("softmax_rows/omp");
BENCHMARK(BM_softmax<false>)->Args({260, 65})->Args({1040, 1040})->Name("softmax_rows/serial");
BENCHMARK(BM_layernorm<true>)->Args({65, 128})->Args({1040, 128})->Name("layernorm/omp");
BENCHMARK(BM_layernorm<false>)->Args({65, 128})->Args({1040, 128})->Name("layernorm/serial");
BENCHMARK(BM_gelu<true>)->Arg(65 * 512)->Arg(1040 * 512)->Name("gelu/omp");
BENCHMARK(BM_gelu<false>)->Arg(65 * 512)->Arg(1040 * 512)->Name("gelu/serial");

BENCHMARK_MAIN();
