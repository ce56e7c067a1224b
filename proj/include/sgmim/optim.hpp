#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <string>

#include "sgmim/params.hpp"

namespace sgmim {

template <typename T>
struct AdamMoments {
  Tensor<T> m;
  Tensor<T> v;
};

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.05;
  double eps = 1e-8;
};

// One AdamW step at (1-based) step t. Weight decay p <- p - lr*wd*p is applied
// separately from the bias-corrected moment step m_hat / (sqrt(v_hat) + eps).
template <typename T>
void adamw_update(Tensor<T>& param, const Tensor<T>& grad, AdamMoments<T>& state, std::size_t t, const AdamHyper& h) {
  if (param.shape() != grad.shape()) throw GeometryError("adamw_update: parameter/gradient shape mismatch");
  if (state.m.empty()) state.m = Tensor<T>(param.shape(), T(0));
  if (state.v.empty()) state.v = Tensor<T>(param.shape(), T(0));
  if (t == 0) throw ConfigError("adamw_update: step index is 1-based");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T lr = static_cast<T>(h.lr), decay = static_cast<T>(h.lr * h.weight_decay);
  const T inv_c1 = static_cast<T>(1.0 / c1), inv_c2 = static_cast<T>(1.0 / c2), eps = static_cast<T>(h.eps);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    param[i] -= decay * param[i];
    const T m_hat = state.m[i] * inv_c1;
    const T v_hat = state.v[i] * inv_c2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

struct LrSchedule {
  std::size_t steps = 3000;
  std::size_t warmup_steps = 300;
  double base_lr = 1e-3;
  double min_lr = 1e-5;
};

// Linear warmup 0 -> base over warmup_steps, then cosine decay to min_lr at `steps`.
inline double cosine_lr(std::size_t step, const LrSchedule& s) {
  if (s.warmup_steps > 0 && step < s.warmup_steps) {
    return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  if (step >= s.steps) return s.min_lr;
  const double progress =
      static_cast<double>(step - s.warmup_steps) / static_cast<double>(std::max<std::size_t>(1, s.steps - s.warmup_steps));
  return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

// Scales all gradients so their global L2 norm is at most max_norm; returns the pre-clip norm.
template <typename T>
double clip_global_norm(std::map<std::string, Tensor<T>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& [_, g] : grads) {
    for (T v : g.data()) sq += double(v) * double(v);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& [_, g] : grads) {
      for (auto& v : g.data()) v *= f;
    }
  }
  return norm;
}

}  // namespace sgmim
