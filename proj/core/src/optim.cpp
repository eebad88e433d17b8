#include "adaptlm/optim.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "adaptlm/error.hpp"

namespace adaptlm {

void ScheduleConfig::validate() const {
  if (!(peak_lr > 0.0)) throw Error(ErrorCode::invalid_argument, fmt::format("peak_lr must be positive, got {}", peak_lr));
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, fmt::format("warmup_ratio {} outside [0, 1]", warmup_ratio));
  }
  if (total_steps < 1) throw Error(ErrorCode::invalid_argument, "total_steps must be at least 1");
  if (!(floor_lr >= 0.0) || floor_lr > peak_lr) {
    throw Error(ErrorCode::invalid_argument, "floor_lr must lie in [0, peak_lr]");
  }
}

std::int64_t ScheduleConfig::warmup_steps() const {
  return static_cast<std::int64_t>(std::llround(warmup_ratio * static_cast<double>(total_steps)));
}

double lr_at(std::int64_t step, const ScheduleConfig& s) {
  if (step < 0 || step > s.total_steps) {
    throw Error(ErrorCode::out_of_range, fmt::format("step {} outside [0, {}]", step, s.total_steps));
  }
  const auto warmup = s.warmup_steps();
  if (step < warmup) return s.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const auto decay_steps = s.total_steps - warmup;
  if (decay_steps == 0) return s.peak_lr;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(decay_steps);
  return s.floor_lr + (s.peak_lr - s.floor_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <Real T>
AdamWState<T> AdamWState<T>::init(const ParameterSet<T>& params, AdamWConfig config) {
  return AdamWState{config, 0, params.zeros(), params.zeros()};
}

template <Real T>
void adamw_step(ParameterSet<T>& params, const ParameterSet<T>& grads, AdamWState<T>& state, double rate) {
  if (!(rate >= 0.0)) throw Error(ErrorCode::invalid_argument, fmt::format("learning rate {} is negative", rate));
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw Error(ErrorCode::invalid_argument, "adamw: parameter, gradient and moment sets differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || state.first_moment[i].shape() != params[i].shape()) {
      throw Error(ErrorCode::invalid_argument, fmt::format("adamw: shape mismatch for '{}'", params.name(i)));
    }
    for (const auto g : grads[i].data()) {
      if (!std::isfinite(g)) {
        throw NumericError(fmt::format("non-finite gradient in '{}' at optimizer step {}", params.name(i), state.step + 1));
      }
    }
  }

  const auto& c = state.config;
  const auto t = ++state.step;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    const auto g = grads[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      double wj = static_cast<double>(w[j]);
      const double gj = static_cast<double>(g[j]);
      wj -= rate * c.weight_decay * wj;
      const double mj = c.beta1 * static_cast<double>(m[j]) + (1.0 - c.beta1) * gj;
      const double vj = c.beta2 * static_cast<double>(v[j]) + (1.0 - c.beta2) * gj * gj;
      const double m_hat = mj / bias1;
      const double v_hat = vj / bias2;
      wj -= rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      w[j] = static_cast<T>(wj);
    }
  }
}

template <Real T>
double global_norm(const ParameterSet<T>& grads) {
  double sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (const auto g : grads[i].data()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

template <Real T>
double clip_grad_norm(ParameterSet<T>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const auto scale = static_cast<T>(max_norm / norm);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      for (auto& g : grads[i].data()) g *= scale;
    }
  }
  return norm;
}

template struct AdamWState<float>;
template struct AdamWState<double>;
template void adamw_step<float>(ParameterSet<float>&, const ParameterSet<float>&, AdamWState<float>&, double);
template void adamw_step<double>(ParameterSet<double>&, const ParameterSet<double>&, AdamWState<double>&, double);
template double clip_grad_norm<float>(ParameterSet<float>&, double);
template double clip_grad_norm<double>(ParameterSet<double>&, double);
template double global_norm<float>(const ParameterSet<float>&);
template double global_norm<double>(const ParameterSet<double>&);

}  // namespace adaptlm
