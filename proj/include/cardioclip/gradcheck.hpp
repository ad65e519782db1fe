// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "cardioclip/params.hpp"

namespace cardioclip {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

/// Loss evaluated at the store's current values. When called with `true`
/// it must also accumulate analytic gradients into the store.
using LossFn = std::function<double(bool with_grad)>;

/// Compares analytic gradients against central differences
/// (f(θ+eps) − f(θ−eps)) / (2·eps) at `n_probes` random scalars. Probes
/// cycle over tensors in a seeded random order so every tensor is probed
/// once before any is probed twice. Relative error is
/// |ga − gn| / max(1e-8, |ga| + |gn|).
GradCheckReport gradient_check(ParamStore<double>& params, const LossFn& loss,
                               std::size_t n_probes, double eps, std::uint64_t seed = 0);

}  // namespace cardioclip
