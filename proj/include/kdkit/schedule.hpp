// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>

namespace kd {

struct ScheduleState {
  std::int64_t step = 0;
  std::int64_t total_steps = 1;
  std::int64_t warmup_steps = 0;
  double base_lr = 0.0;
  double current_lr = 0.0;
};

/// Linear warmup from 0 to base_lr over warmup_steps, then a single cosine
/// decay reaching 0 at total_steps. Steps outside [0, total_steps] are clamped.
double lr_at(const ScheduleState& state, std::int64_t step);

/// shadow <- decay * shadow + (1 - decay) * params, elementwise.
void ema_update(std::span<float> shadow, std::span<const float> params, double decay);
void ema_update(std::span<double> shadow, std::span<const double> params, double decay);

}  // namespace kd
