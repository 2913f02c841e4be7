#pragma once

#include "dista/autodiff.hpp"

namespace dista {

enum class BnMode { train, infer };

/// Running statistics and hyperparameters of one batch-norm layer. The
/// affine gamma/beta live elsewhere (as Parameters inside a model, or in
/// BatchNormState for standalone use).
template <class T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNormStats() = default;
  explicit BatchNormStats(std::size_t channels)
      : running_mean({channels}, T(0)), running_var({channels}, T(1)) {}

  std::size_t channels() const { return running_mean.size(); }
};

template <class T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> stats;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : gamma({channels}, T(1)), beta({channels}, T(0)), stats(channels) {}
};

namespace detail {

template <class T>
struct BnSaved {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

// Per-channel normalisation over rows. Train mode uses population batch
// statistics and folds them into the running averages.
template <class T>
Tensor<T> bn_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, BnMode mode, BnSaved<T>& saved) {
  require_matrix(x.shape(), "batchnorm");
  const std::size_t rows = x.rows();
  const std::size_t ch = x.cols();
  if (gamma.size() != ch || beta.size() != ch || stats.channels() != ch)
    throw DimensionError("batchnorm: expected " + std::to_string(stats.channels()) +
                         " channels, got " + std::to_string(ch));
  std::vector<T> mean(ch, T(0));
  std::vector<T> var(ch, T(0));
  if (mode == BnMode::train) {
    if (rows < 2)
      throw DegenerateBatchError("batchnorm: train mode needs at least 2 rows, got " +
                                 std::to_string(rows));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < ch; ++c) mean[c] += x(r, c);
    for (std::size_t c = 0; c < ch; ++c) mean[c] /= static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < ch; ++c) {
        const T d = x(r, c) - mean[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < ch; ++c) {
      var[c] /= static_cast<T>(rows);
      stats.running_mean[c] = (T(1) - stats.momentum) * stats.running_mean[c] + stats.momentum * mean[c];
      stats.running_var[c] = (T(1) - stats.momentum) * stats.running_var[c] + stats.momentum * var[c];
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      mean[c] = stats.running_mean[c];
      var[c] = stats.running_var[c];
    }
  }
  saved.inv_std.resize(ch);
  for (std::size_t c = 0; c < ch; ++c) saved.inv_std[c] = T(1) / std::sqrt(var[c] + stats.eps);
  saved.xhat = Tensor<T>(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < ch; ++c) {
      const T xh = (x(r, c) - mean[c]) * saved.inv_std[c];
      saved.xhat(r, c) = xh;
      y(r, c) = xh * gamma[c] + beta[c];
    }
  return y;
}

}  // namespace detail

/// Standalone batch normalisation of x[B×C].
template <class T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormState<T>& state, BnMode mode) {
  detail::BnSaved<T> saved;
  return detail::bn_forward(x, state.gamma, state.beta, state.stats, mode, saved);
}

template <class T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats, BnMode mode) {
  detail::BnSaved<T> saved;
  Tensor<T> y = detail::bn_forward(x.value(), gamma.value(), beta.value(), stats, mode, saved);
  return x.tape->record(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, mode, saved = std::move(saved)](Tape<T>& tape, const Tensor<T>& g) {
        const std::size_t rows = g.rows();
        const std::size_t ch = g.cols();
        const auto& gam = gamma.value();
        if (gamma.requires_grad()) {
          auto& gg = tape.grad(gamma);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < ch; ++c) gg[c] += g(r, c) * saved.xhat(r, c);
        }
        if (beta.requires_grad()) {
          auto& gb = tape.grad(beta);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < ch; ++c) gb[c] += g(r, c);
        }
        if (!x.requires_grad()) return;
        auto& gx = tape.grad(x);
        if (mode == BnMode::infer) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < ch; ++c) gx(r, c) += g(r, c) * gam[c] * saved.inv_std[c];
          return;
        }
        std::vector<T> sum_dxh(ch, T(0));
        std::vector<T> sum_dxh_xh(ch, T(0));
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < ch; ++c) {
            const T dxh = g(r, c) * gam[c];
            sum_dxh[c] += dxh;
            sum_dxh_xh[c] += dxh * saved.xhat(r, c);
          }
        const T n = static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < ch; ++c) {
            const T dxh = g(r, c) * gam[c];
            gx(r, c) += saved.inv_std[c] / n * (n * dxh - sum_dxh[c] - saved.xhat(r, c) * sum_dxh_xh[c]);
          }
      });
}

}  // namespace dista
