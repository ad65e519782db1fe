// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cardioclip/errors.hpp"
#include "cardioclip/rng.hpp"

namespace cardioclip {

namespace {

double finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("gradient_check: non-finite loss ") + what);
  return v;
}

}  // namespace

GradCheckReport gradient_check(ParamStore<double>& params, const LossFn& loss,
                               std::size_t n_probes, double eps, std::uint64_t seed) {
  if (params.size() == 0) throw std::invalid_argument("gradient_check: empty parameter store");
  if (!(eps > 0.0)) throw std::invalid_argument("gradient_check: eps must be positive");

  params.zero_grad();
  finite_or_throw(loss(true), "at base point");

  Rng rng(seed);
  std::vector<std::size_t> order(params.size());
  std::iota(order.begin(), order.end(), 0);

  GradCheckReport report;
  auto& items = params.items();
  for (std::size_t probe = 0; probe < n_probes; ++probe) {
    if (probe % order.size() == 0) rng.shuffle(order);
    auto& p = items[order[probe % order.size()]];
    const std::size_t i = rng.index(p.numel());
    const double saved = p.value[i];
    p.value[i] = saved + eps;
    const double up = finite_or_throw(loss(false), "at +eps");
    p.value[i] = saved - eps;
    const double down = finite_or_throw(loss(false), "at -eps");
    p.value[i] = saved;

    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = p.grad[i];
    const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    ++report.probes;
    if (rel > report.max_rel_error || report.worst_param.empty()) {
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace cardioclip
