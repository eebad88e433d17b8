#pragma once

#include <cstdint>

#include "adaptlm/model.hpp"

namespace adaptlm {

/// Linear warmup to `peak_lr`, then cosine decay to `floor_lr` at `total_steps`.
struct ScheduleConfig {
  double peak_lr = 2e-5;
  double warmup_ratio = 0.3;
  std::int64_t total_steps = 1;
  double floor_lr = 0.0;

  void validate() const;
  /// round(warmup_ratio * total_steps)
  std::int64_t warmup_steps() const;
  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

double lr_at(std::int64_t step, const ScheduleConfig& schedule);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

template <Real T>
struct AdamWState {
  AdamWConfig config;
  std::int64_t step = 0;
  ParameterSet<T> first_moment;
  ParameterSet<T> second_moment;

  static AdamWState init(const ParameterSet<T>& params, AdamWConfig config = {});
  friend bool operator==(const AdamWState&, const AdamWState&) = default;
};

/// Bias-corrected AdamW with decoupled weight decay applied before the
/// adaptive step. Throws NumericError (and leaves everything untouched) if any
/// gradient is non-finite.
template <Real T>
void adamw_step(ParameterSet<T>& params, const ParameterSet<T>& grads, AdamWState<T>& state, double rate);

/// Scales grads in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
template <Real T>
double clip_grad_norm(ParameterSet<T>& grads, double max_norm);

template <Real T>
double global_norm(const ParameterSet<T>& grads);

}  // namespace adaptlm
