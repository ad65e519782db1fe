// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cardioclip {

std::vector<std::string> ScheduleConfig::validate() const {
  std::vector<std::string> errs;
  if (warmup_steps > total_steps) errs.push_back("ScheduleConfig: warmup_steps must be <= total_steps");
  if (!(min_lr >= 0.0)) errs.push_back("ScheduleConfig: min_lr must be >= 0");
  if (!(base_lr > min_lr)) errs.push_back("ScheduleConfig: base_lr must exceed min_lr");
  if (!(weight_decay >= 0.0)) errs.push_back("ScheduleConfig: weight_decay must be >= 0");
  return errs;
}

double lr_at_step(const ScheduleConfig& s, std::size_t step) {
  if (step > s.total_steps) {
    throw std::invalid_argument("lr_at_step: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(s.total_steps) + "]");
  }
  if (step < s.warmup_steps) {
    return s.base_lr * static_cast<double>(step + 1) / static_cast<double>(s.warmup_steps);
  }
  const std::size_t decay_steps = s.total_steps - s.warmup_steps;
  if (decay_steps == 0) return s.base_lr;
  const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(decay_steps);
  return s.min_lr + (s.base_lr - s.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::size_t warmup_from_fraction(double fraction, std::size_t total_steps) {
  if (fraction <= 0.0) return 0;
  const auto w = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total_steps)));
  return std::min(total_steps, std::max<std::size_t>(1, w));
}

template <typename T>
AdamW<T>::AdamW(ParamStore<T>& store, double beta1, double beta2, double eps)
    : store_(&store), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : store.items()) {
    m_.emplace_back(p.numel(), T{0});
    v_.emplace_back(p.numel(), T{0});
  }
}

template <typename T>
void AdamW<T>::step(double encoder_lr, double projection_lr, double weight_decay, bool freeze_encoder) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t idx = 0;
  for (auto& p : store_->items()) {
    auto& m = m_[idx];
    auto& v = v_[idx];
    ++idx;
    const bool encoder = p.group == ParamGroup::Encoder;
    if (encoder && freeze_encoder) continue;
    const T lr = static_cast<T>(encoder ? encoder_lr : projection_lr);
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T c1 = static_cast<T>(1.0 / bc1), c2 = static_cast<T>(1.0 / bc2);
    const T wd = p.decay ? static_cast<T>(weight_decay) : T{0};
    const T eps = static_cast<T>(eps_);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const T g = p.grad[i];
      m[i] = b1 * m[i] + (T{1} - b1) * g;
      v[i] = b2 * v[i] + (T{1} - b2) * g * g;
      const T mhat = m[i] * c1;
      const T vhat = v[i] * c2;
      p.value[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p.value[i]);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace cardioclip
