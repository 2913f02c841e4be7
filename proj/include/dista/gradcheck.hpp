#pragma once

#include <functional>

#include "dista/tensor.hpp"

namespace dista {

/// Central finite differences, one coordinate at a time:
/// (f(x + h·e_i) − f(x − h·e_i)) / 2h. Independent of the tape.
inline Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                       const Tensor<double>& x, double h) {
  if (!(h > 0)) throw ContractError("finite_diff_grad: step must be positive");
  Tensor<double> probe = x;
  Tensor<double> grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite_diff_grad: non-finite function value at coordinate " +
                         std::to_string(i));
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

/// Symmetric relative error with an absolute floor on the denominator.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(const Tensor<double>& a, const Tensor<double>& b,
                                 double floor = 1e-6) {
  if (a.shape() != b.shape()) throw DimensionError("max_relative_error: shape mismatch");
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
  return worst;
}

}  // namespace dista
