#pragma once

// Discrete-time leaky integrate-and-fire neurons with hard reset and
// learnable per-neuron membrane time constants:
//
//   V[t] = (1 − 1/τ) · V[t−1] · (1 − s[t−1]) + I[t]
//   s[t] = H(V[t] − θ)
//
// The spike nonlinearity is differentiated with a rectangular surrogate in
// hard mode; smooth mode swaps H for a sigmoid in both directions so the
// whole network becomes differentiable (used only for gradient checks).

#include <optional>

#include "dista/autodiff.hpp"
#include "dista/batchnorm.hpp"

namespace dista {

inline constexpr double kTauMin = 1.01;
inline constexpr double kTauMax = 100.0;
inline constexpr double kTauInit = 2.0;

enum class SpikeMode { hard, smooth };

/// Everything a forward pass needs besides parameters and inputs.
template <class T>
struct ForwardContext {
  Tape<T>* tape = nullptr;
  BnMode bn = BnMode::train;
  SpikeMode spike = SpikeMode::hard;
  // Incremented once per attention-map entry compared against the
  // denoising threshold.
  std::uint64_t* comparisons = nullptr;
  // Negative-control fixture for the gradient checker: scales every
  // τ-gradient contribution so the check must fail.
  bool corrupt_tau_grad = false;
};

template <class T>
struct TauParams {
  Tensor<T> values;
  bool learnable = true;
};

template <class T>
struct NeuronParams {
  T theta = T(1);
  TauParams<T> tau;
  T surrogate_width = T(1);
};

template <class T>
struct MembraneState {
  Tensor<T> v;
  Tensor<T> s_prev;

  static MembraneState zeros(const Shape& shape) { return {Tensor<T>(shape), Tensor<T>(shape)}; }
};

template <class T>
struct SpikeSequence {
  std::vector<Tensor<T>> steps;

  std::size_t timesteps() const { return steps.size(); }
  bool binary() const {
    return std::all_of(steps.begin(), steps.end(), [](const auto& s) { return is_binary(s); });
  }
};

template <class T>
Tensor<T> heaviside(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= T(0) ? T(1) : T(0);
  return out;
}

/// Rectangular window of width a and height 1/a centred on θ.
template <class T>
Tensor<T> surrogate_pseudo_derivative(const Tensor<T>& v, T theta, T a) {
  if (!(a > T(0))) throw DomainError("surrogate width must be positive");
  Tensor<T> out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = std::abs(v[i] - theta) < a / T(2) ? T(1) / a : T(0);
  return out;
}

template <class T>
TauParams<T> clamp_tau(TauParams<T> tau) {
  for (auto& v : tau.values.values()) v = std::clamp(v, T(kTauMin), T(kTauMax));
  return tau;
}

template <class T>
void clamp_tau_inplace(Tensor<T>& tau) {
  for (auto& v : tau.values()) v = std::clamp(v, T(kTauMin), T(kTauMax));
}

namespace detail {

// Maps element (r, c) of a [R×C] membrane tensor to its τ entry. τ is a
// scalar, a [C] row, or a [P×C] block repeated every P rows (P tokens per
// batch element).
struct TauIndex {
  std::size_t period_rows = 1;
  std::size_t cols = 1;
  bool scalar = false;

  TauIndex(const Shape& tau, const Shape& v) {
    const std::size_t vr = v.size() == 2 ? v[0] : 1;
    const std::size_t vc = v.size() == 2 ? v[1] : (v.empty() ? 1 : v[0]);
    const std::size_t ts = shape_size(tau);
    if (ts == 1) {
      scalar = true;
      return;
    }
    period_rows = tau.size() == 2 ? tau[0] : 1;
    cols = tau.size() == 2 ? tau[1] : ts;
    if (cols != vc || vr % period_rows != 0)
      throw DimensionError("tau shape " + shape_str(tau) + " does not broadcast to " + shape_str(v));
  }

  std::size_t operator()(std::size_t r, std::size_t c) const {
    return scalar ? 0 : (r % period_rows) * cols + c;
  }
};

template <class T>
void require_tau_domain(const Tensor<T>& tau) {
  for (T v : tau.values())
    if (!(v > T(1)))
      throw DomainError("membrane time constant must exceed 1, got " + std::to_string(v));
}

}  // namespace detail

/// One plain (untaped) LIF update.
template <class T>
std::pair<MembraneState<T>, Tensor<T>> lif_step(const MembraneState<T>& state,
                                                 const Tensor<T>& input,
                                                 const NeuronParams<T>& params) {
  if (state.v.shape() != input.shape() || state.s_prev.shape() != input.shape())
    throw DimensionError("lif_step: state/input shape mismatch");
  const auto& tau = params.tau.values;
  detail::require_tau_domain(tau);
  const detail::TauIndex idx(tau.shape(), input.shape());
  const std::size_t rows = input.rank() == 2 ? input.rows() : 1;
  const std::size_t cols = input.size() / rows;
  MembraneState<T> next{Tensor<T>(input.shape()), Tensor<T>(input.shape())};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      const T decay = T(1) - T(1) / tau[idx(r, c)];
      next.v[i] = decay * state.v[i] * (T(1) - state.s_prev[i]) + input[i];
      next.s_prev[i] = next.v[i] - params.theta >= T(0) ? T(1) : T(0);
    }
  Tensor<T> spikes = next.s_prev;
  return {std::move(next), std::move(spikes)};
}

/// Membrane charge on the tape. Without a previous state (t = 0) the
/// membrane starts from rest, so V equals the input current.
template <class T>
Var<T> lif_charge(std::optional<Var<T>> v_prev, std::optional<Var<T>> s_prev, Var<T> input,
                  Var<T> tau, bool corrupt_tau_grad = false) {
  const auto& iv = input.value();
  require_matrix(iv.shape(), "lif_charge");
  if (!v_prev) {
    Tensor<T> out = iv;
    return input.tape->record(std::move(out), {input}, [input](Tape<T>& tape, const Tensor<T>& g) {
      detail::add_into(tape.grad(input), g);
    });
  }
  const auto& tv = tau.value();
  detail::require_tau_domain(tv);
  const detail::TauIndex idx(tv.shape(), iv.shape());
  const auto& vp = v_prev->value();
  const auto& sp = s_prev->value();
  if (vp.shape() != iv.shape() || sp.shape() != iv.shape())
    throw DimensionError("lif_charge: state/input shape mismatch");
  const std::size_t rows = iv.rows();
  const std::size_t cols = iv.cols();
  Tensor<T> out(iv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const T decay = T(1) - T(1) / tv[idx(r, c)];
      out(r, c) = decay * vp(r, c) * (T(1) - sp(r, c)) + iv(r, c);
    }
  const Var<T> vpv = *v_prev;
  const Var<T> spv = *s_prev;
  const T tau_scale = corrupt_tau_grad ? T(1.5) : T(1);
  return input.tape->record(
      std::move(out), {vpv, spv, input, tau},
      [vpv, spv, input, tau, idx, rows, cols, tau_scale](Tape<T>& tape, const Tensor<T>& g) {
        const auto& tv = tau.value();
        const auto& vp = vpv.value();
        const auto& sp = spv.value();
        if (input.requires_grad()) detail::add_into(tape.grad(input), g);
        Tensor<T>* gv = vpv.requires_grad() ? &tape.grad(vpv) : nullptr;
        Tensor<T>* gs = spv.requires_grad() ? &tape.grad(spv) : nullptr;
        Tensor<T>* gt = tau.requires_grad() ? &tape.grad(tau) : nullptr;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const T gi = g(r, c);
            if (gi == T(0)) continue;
            const T t = tv[idx(r, c)];
            const T decay = T(1) - T(1) / t;
            const T keep = T(1) - sp(r, c);
            if (gv) (*gv)(r, c) += gi * decay * keep;
            if (gs) (*gs)(r, c) -= gi * decay * vp(r, c);
            if (gt) (*gt)[idx(r, c)] += tau_scale * gi * vp(r, c) * keep / (t * t);
          }
      });
}

/// Spike generation. Hard mode: H(v − θ) forward, rectangular surrogate
/// backward. Smooth mode: σ((v − θ)/a) in both directions.
template <class T>
Var<T> fire(Var<T> v, T theta, T width, SpikeMode mode) {
  if (!(width > T(0))) throw DomainError("surrogate width must be positive");
  const auto& vv = v.value();
  Tensor<T> out(vv.shape());
  if (mode == SpikeMode::hard) {
    for (std::size_t i = 0; i < vv.size(); ++i) out[i] = vv[i] - theta >= T(0) ? T(1) : T(0);
  } else {
    for (std::size_t i = 0; i < vv.size(); ++i)
      out[i] = T(1) / (T(1) + std::exp(-(vv[i] - theta) / width));
  }
  Tensor<T> saved = mode == SpikeMode::smooth ? out : Tensor<T>{};
  return v.tape->record(
      std::move(out), {v},
      [v, theta, width, mode, saved = std::move(saved)](Tape<T>& tape, const Tensor<T>& g) {
        auto& gv = tape.grad(v);
        const auto& vv = v.value();
        if (mode == SpikeMode::hard) {
          for (std::size_t i = 0; i < g.size(); ++i)
            if (std::abs(vv[i] - theta) < width / T(2)) gv[i] += g[i] / width;
        } else {
          for (std::size_t i = 0; i < g.size(); ++i)
            gv[i] += g[i] * saved[i] * (T(1) - saved[i]) / width;
        }
      });
}

template <class T>
struct LifTrace {
  std::vector<Var<T>> membrane;
  std::vector<Var<T>> spikes;
};

/// Folds the LIF update over time on the tape, starting from rest.
template <class T>
LifTrace<T> lif_sequence(const ForwardContext<T>& ctx, std::span<const Var<T>> inputs, Var<T> tau,
                         T theta, T width) {
  detail::require_tau_domain(tau.value());
  LifTrace<T> trace;
  trace.membrane.reserve(inputs.size());
  trace.spikes.reserve(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (t > 0 && inputs[t].shape() != inputs[0].shape())
      throw DimensionError("lif_sequence: step shapes differ");
    std::optional<Var<T>> vp, sp;
    if (t > 0) {
      vp = trace.membrane.back();
      sp = trace.spikes.back();
    }
    Var<T> v = lif_charge(vp, sp, inputs[t], tau, ctx.corrupt_tau_grad);
    trace.membrane.push_back(v);
    trace.spikes.push_back(fire(v, theta, width, ctx.spike));
  }
  return trace;
}

/// Untaped convenience: runs a whole sequence and returns the spikes.
template <class T>
SpikeSequence<T> lif_sequence(const std::vector<Tensor<T>>& inputs, const NeuronParams<T>& params) {
  Tape<T> tape(false);
  ForwardContext<T> ctx{&tape};
  std::vector<Var<T>> in;
  for (const auto& x : inputs) in.push_back(tape.constant(x.rank() == 2 ? x : x.reshaped({1, x.size()})));
  const Var<T> tau = tape.constant(params.tau.values);
  LifTrace<T> trace = lif_sequence<T>(ctx, in, tau, params.theta, params.surrogate_width);
  SpikeSequence<T> out;
  for (std::size_t t = 0; t < inputs.size(); ++t)
    out.steps.push_back(trace.spikes[t].value().reshaped(inputs[t].shape()));
  return out;
}

}  // namespace dista
