#pragma once

#include <numbers>

#include "dista/layers.hpp"

namespace dista {

struct TrainHyper {
  double lr = 0.003;
  double lr_floor_ratio = 0.125;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 0.0;  // max global L2 norm; 0 disables clipping
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (!(lr_floor_ratio >= 0 && lr_floor_ratio <= 1)) throw ConfigError("lr_floor_ratio must lie in [0,1]");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
      throw ConfigError("adam betas must lie in [0,1)");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
    if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be non-negative");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (batch norm)");
    if (epochs == 0) throw ConfigError("epochs must be positive");
  }
};

/// Cosine decay from the base rate to base·lr_floor_ratio over total_steps.
inline double cosine_lr(std::size_t step, std::size_t total_steps, const TrainHyper& hyper) {
  if (total_steps == 0) throw ConfigError("cosine_lr: total_steps must be positive");
  if (step > total_steps) throw ContractError("cosine_lr: step beyond schedule");
  const double floor = hyper.lr * hyper.lr_floor_ratio;
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return floor + (hyper.lr - floor) * (1.0 + std::cos(phase)) / 2.0;
}

template <class T>
struct OptimState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;

  void init(const ParamStore<T>& store) {
    m.clear();
    v.clear();
    for (const auto& p : store) {
      m.emplace_back(p.value.shape());
      v.emplace_back(p.value.shape());
    }
    step = 0;
  }
};

/// Only weight matrices decay; biases, batch-norm affine terms and time
/// constants do not.
inline bool decays(ParamKind kind) { return kind == ParamKind::weight; }

/// One decoupled-weight-decay Adam update over every parameter in the
/// store, followed by projection of τ into [kTauMin, kTauMax].
template <class T>
void adamw_step(ParamStore<T>& store, OptimState<T>& state, const TrainHyper& hyper, double lr_t) {
  if (state.m.size() != store.size()) state.init(store);
  for (const auto& p : store) {
    if (p.grad.shape() != p.value.shape())
      throw DimensionError("adamw_step: gradient shape mismatch for " + p.name);
    if (!all_finite(p.grad)) throw NumericError("non-finite gradient in parameter " + p.name);
  }
  double clip = 1.0;
  if (hyper.grad_clip > 0) {
    double sq = 0;
    for (const auto& p : store)
      for (T g : p.grad.values()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > hyper.grad_clip) clip = hyper.grad_clip / norm;
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  const T b1 = T(hyper.beta1), b2 = T(hyper.beta2);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    const T decay = decays(p.kind) ? T(1.0 - lr_t * hyper.weight_decay) : T(1);
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T g = p.grad[j] * T(clip);
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const T mhat = m[j] / T(bc1);
      const T vhat = v[j] / T(bc2);
      p.value[j] = p.value[j] * decay - T(lr_t) * mhat / (std::sqrt(vhat) + T(hyper.adam_eps));
    }
    if (p.kind == ParamKind::tau) clamp_tau_inplace(p.value);
  }
}

}  // namespace dista
