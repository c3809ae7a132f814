// SPDX-License-Identifier: Apache-2.0
#include "kdkit/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kdkit/errors.hpp"

namespace kd {

double lr_at(const ScheduleState& s, std::int64_t step) {
  step = std::clamp<std::int64_t>(step, 0, s.total_steps);
  if (step < s.warmup_steps) {
    return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  const std::int64_t decay_steps = s.total_steps - s.warmup_steps;
  if (decay_steps <= 0) return s.base_lr;
  const double progress =
      static_cast<double>(step - s.warmup_steps) / static_cast<double>(decay_steps);
  return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

template <typename T>
void ema_impl(std::span<T> shadow, std::span<const T> params, double decay) {
  if (shadow.size() != params.size()) fail(ErrorKind::Shape, "EMA shadow and parameters differ in size");
  if (!(decay >= 0 && decay < 1)) fail(ErrorKind::Config, "EMA decay must be in [0,1)");
  const T d = static_cast<T>(decay);
  const T keep = static_cast<T>(1.0 - decay);
  for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] = d * shadow[i] + keep * params[i];
}

}  // namespace

void ema_update(std::span<float> shadow, std::span<const float> params, double decay) {
  ema_impl(shadow, params, decay);
}

void ema_update(std::span<double> shadow, std::span<const double> params, double decay) {
  ema_impl(shadow, params, decay);
}

}  // namespace kd
