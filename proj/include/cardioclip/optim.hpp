// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cardioclip/params.hpp"

namespace cardioclip {

/// Linear warmup followed by cosine decay to min_lr.
struct ScheduleConfig {
  double base_lr = 1e-4;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
  double weight_decay = 0.01;
  double min_lr = 0.0;

  std::vector<std::string> validate() const;
};

/// Learning rate at `step` in [0, total_steps].
double lr_at_step(const ScheduleConfig& s, std::size_t step);

/// Warmup length as a fraction of the total (rounded, at least one step
/// when the fraction is positive).
std::size_t warmup_from_fraction(double fraction, std::size_t total_steps);

/// AdamW with decoupled weight decay and one learning rate per ParamGroup.
/// Decay applies only to parameters flagged `decay` (weight matrices).
template <typename T>
class AdamW {
 public:
  explicit AdamW(ParamStore<T>& store, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// lr for encoder and projection groups; frozen groups are skipped.
  void step(double encoder_lr, double projection_lr, double weight_decay, bool freeze_encoder = false);

  std::size_t steps_taken() const { return t_; }

 private:
  ParamStore<T>* store_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace cardioclip
