// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <type_traits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cardioclip/kernels.hpp"
#include "cardioclip/rng.hpp"

using namespace cardioclip;
namespace k = cardioclip::kernels;

namespace {

template <typename T>
std::vector<T> randv(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return v;
}

// Serial loops sum in a different order, so agreement is to rounding only.
template <typename T>
bool close(const std::vector<T>& a, const std::vector<T>& b) {
  const double tol = std::is_same_v<T, float> ? 1e-5 : 1e-12;
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(double(a[i]) - double(b[i])) > tol * (1.0 + std::abs(double(b[i])))) return false;
  return true;
}

}  // namespace

TEST_CASE_TEMPLATE("gemm variants match a naive triple loop and the serial path", T, float, double) {
  const std::size_t m = 37, kk = 19, n = 23;
  const auto a = randv<T>(m * kk, 1), b = randv<T>(kk * n, 2), bt = randv<T>(n * kk, 3), g = randv<T>(m * n, 4);

  std::vector<T> c(m * n), cs(m * n);
  k::gemm_nn<T>(a, b, c, m, kk, n);
  k::serial::gemm_nn<T>(a, b, cs, m, kk, n);
  CHECK(close(c, cs));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < kk; ++p) s += double(a[i * kk + p]) * double(b[p * n + j]);
      CHECK(double(c[i * n + j]) == doctest::Approx(s).epsilon(1e-5));
    }

  k::gemm_nn<T>(a, b, c, m, kk, n, true);
  k::serial::gemm_nn<T>(a, b, cs, m, kk, n, true);
  CHECK(close(c, cs));

  k::gemm_nt<T>(a, bt, c, m, kk, n);
  k::serial::gemm_nt<T>(a, bt, cs, m, kk, n);
  CHECK(close(c, cs));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < kk; ++p) s += double(a[i * kk + p]) * double(bt[j * kk + p]);
      CHECK(double(c[i * n + j]) == doctest::Approx(s).epsilon(1e-5));
    }

  std::vector<T> w(kk * n, T{1}), ws(kk * n, T{1});
  k::gemm_tn_acc<T>(a, g, w, m, kk, n);
  k::serial::gemm_tn_acc<T>(a, g, ws, m, kk, n);
  CHECK(close(w, ws));
  for (std::size_t p = 0; p < kk; ++p)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 1;
      for (std::size_t i = 0; i < m; ++i) s += double(a[i * kk + p]) * double(g[i * n + j]);
      CHECK(double(w[p * n + j]) == doctest::Approx(s).epsilon(1e-5));
    }
}

TEST_CASE_TEMPLATE("elementwise kernels match the serial path", T, float, double) {
  const std::size_t rows = 29, cols = 17;
  auto x = randv<T>(rows * cols, 5);
  const auto bias = randv<T>(cols, 6), dy = randv<T>(rows * cols, 7);
  const auto gamma = randv<T>(cols, 8), beta = randv<T>(cols, 9);

  auto xb = x, xbs = x;
  k::add_row_bias<T>(xb, bias, rows, cols);
  k::serial::add_row_bias<T>(xbs, bias, rows, cols);
  CHECK(close(xb, xbs));

  std::vector<T> cs1(cols), cs2(cols);
  k::col_sum_acc<T>(x, cs1, rows, cols);
  k::serial::col_sum_acc<T>(x, cs2, rows, cols);
  CHECK(close(cs1, cs2));

  auto p = x, ps = x;
  k::softmax_rows<T>(p, rows, cols);
  k::serial::softmax_rows<T>(ps, rows, cols);
  CHECK(close(p, ps));
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += p[r * cols + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
  std::vector<T> dx(rows * cols), dxs(rows * cols);
  k::softmax_rows_backward<T>(p, dy, dx, rows, cols);
  k::serial::softmax_rows_backward<T>(p, dy, dxs, rows, cols);
  CHECK(close(dx, dxs));

  std::vector<T> y(rows * cols), ys(rows * cols), xh(rows * cols), xhs(rows * cols), rs(rows), rss(rows);
  k::layernorm_forward<T>(x, gamma, beta, y, xh, rs, rows, cols, T(1e-5));
  k::serial::layernorm_forward<T>(x, gamma, beta, ys, xhs, rss, rows, cols, T(1e-5));
  CHECK(close(y, ys));
  CHECK(close(xh, xhs));
  CHECK(close(rs, rss));
  std::vector<T> dg(cols), dgs(cols), db(cols), dbs(cols);
  k::layernorm_backward<T>(dy, xh, rs, gamma, dx, dg, db, rows, cols);
  k::serial::layernorm_backward<T>(dy, xhs, rss, gamma, dxs, dgs, dbs, rows, cols);
  CHECK(close(dx, dxs));
  CHECK(close(dg, dgs));
  CHECK(close(db, dbs));

  k::gelu_forward<T>(x, y);
  k::serial::gelu_forward<T>(x, ys);
  CHECK(close(y, ys));
  k::gelu_backward<T>(x, dy, dx);
  k::serial::gelu_backward<T>(x, dy, dxs);
  CHECK(close(dx, dxs));
}

TEST_CASE("softmax is stable for large logits") {
  std::vector<double> x{1000.0, 1001.0, 999.0};
  k::softmax_rows<double>(x, 1, 3);
  for (double v : x) CHECK(std::isfinite(v));
  CHECK(x[1] > x[0]);
  CHECK(x[0] > x[2]);
}

TEST_CASE("layernorm output has zero mean and unit variance before the affine") {
  const std::size_t rows = 4, cols = 64;
  const auto x = randv<double>(rows * cols, 21);
  std::vector<double> gamma(cols, 1.0), beta(cols, 0.0), y(rows * cols), xh(rows * cols), rs(rows);
  k::layernorm_forward<double>(x, gamma, beta, y, xh, rs, rows, cols, 1e-12);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += y[r * cols + c];
    mean /= cols;
    for (std::size_t c = 0; c < cols; ++c) var += (y[r * cols + c] - mean) * (y[r * cols + c] - mean);
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var / cols == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("exact GELU reference values") {
  std::vector<double> x{0.0, 1.0, -1.0}, y(3);
  k::gelu_forward<double>(x, y);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(0.8413447460685429));
  CHECK(y[2] == doctest::Approx(-0.15865525393145707));
}

#ifdef _OPENMP
TEST_CASE("results do not depend on the thread count") {
  const std::size_t m = 301, kk = 67, n = 129;
  const auto a = randv<float>(m * kk, 31), b = randv<float>(kk * n, 32), g = randv<float>(m * n, 33);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<float> c(m * n), w(kk * n), p = g;
    k::gemm_nn<float>(a, b, c, m, kk, n);
    k::gemm_tn_acc<float>(a, g, w, m, kk, n);
    k::softmax_rows<float>(p, m, n);
    c.insert(c.end(), w.begin(), w.end());
    c.insert(c.end(), p.begin(), p.end());
    return c;
  };
  const int saved = omp_get_max_threads();
  const auto one = run(1);
  CHECK(run(3) == one);
  CHECK(run(8) == one);
  omp_set_num_threads(saved);
}
#endif
