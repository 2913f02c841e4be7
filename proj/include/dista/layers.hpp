#pragma once

#include <random>

#include "dista/batchnorm.hpp"
#include "dista/neuron.hpp"

namespace dista {

/// Owns every learnable tensor of a model, in registration order. Layers
/// refer to entries by index so models stay copyable.
template <class T>
class ParamStore {
 public:
  std::size_t add(std::string name, ParamKind kind, Tensor<T> value) {
    for (const auto& p : params_)
      if (p.name == name) throw ContractError("duplicate parameter name " + name);
    Parameter<T> p{std::move(name), kind, std::move(value), {}};
    p.zero_grad();
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  Parameter<T>* find(std::string_view name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Parameter<T>> params_;
};

struct NeuronConfig {
  double theta = 1.0;
  double surrogate_width = 1.0;
  double tau_init = kTauInit;
  bool learn_tau = true;
};

struct LinearLayer {
  std::size_t w = 0;
  std::size_t b = 0;
};

template <class T>
struct BnLayer {
  std::string name;
  std::size_t gamma = 0;
  std::size_t beta = 0;
  BatchNormStats<T> stats;
};

struct LifLayer {
  std::size_t tau = 0;
};

/// Gaussian initialiser with a fixed draw order.
template <class T>
Tensor<T> gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <class T>
LinearLayer make_linear(ParamStore<T>& store, const std::string& name, std::size_t in,
                        std::size_t out, std::mt19937_64& rng) {
  LinearLayer l;
  l.w = store.add(name + ".w", ParamKind::weight, gaussian<T>({in, out}, std::sqrt(1.0 / in), rng));
  l.b = store.add(name + ".b", ParamKind::bias, Tensor<T>({out}));
  return l;
}

template <class T>
BnLayer<T> make_bn(ParamStore<T>& store, const std::string& name, std::size_t channels) {
  BnLayer<T> l;
  l.name = name;
  l.gamma = store.add(name + ".gamma", ParamKind::bn_gamma, Tensor<T>({channels}, T(1)));
  l.beta = store.add(name + ".beta", ParamKind::bn_beta, Tensor<T>({channels}, T(0)));
  l.stats = BatchNormStats<T>(channels);
  return l;
}

template <class T>
LifLayer make_lif(ParamStore<T>& store, const std::string& name, std::size_t tokens,
                  std::size_t width, const NeuronConfig& ncfg) {
  return {store.add(name + ".tau", ParamKind::tau, Tensor<T>({tokens, width}, T(ncfg.tau_init)))};
}

template <class T>
Var<T> bind(const ForwardContext<T>& ctx, ParamStore<T>& store, std::size_t id) {
  return ctx.tape->watch(store[id]);
}

template <class T>
Var<T> bind_tau(const ForwardContext<T>& ctx, ParamStore<T>& store, const LifLayer& l,
                const NeuronConfig& ncfg) {
  return ncfg.learn_tau ? ctx.tape->watch(store[l.tau]) : ctx.tape->constant(store[l.tau].value);
}

template <class T>
Var<T> apply_linear(const ForwardContext<T>& ctx, ParamStore<T>& store, const LinearLayer& l,
                    Var<T> x) {
  return linear(x, bind(ctx, store, l.w), bind(ctx, store, l.b));
}

template <class T>
Var<T> apply_bn(const ForwardContext<T>& ctx, ParamStore<T>& store, BnLayer<T>& l, Var<T> x) {
  return batchnorm(x, bind(ctx, store, l.gamma), bind(ctx, store, l.beta), l.stats, ctx.bn);
}

template <class T>
std::vector<Var<T>> apply_lif(const ForwardContext<T>& ctx, ParamStore<T>& store, const LifLayer& l,
                              const NeuronConfig& ncfg, const std::vector<Var<T>>& currents) {
  return lif_sequence<T>(ctx, std::span<const Var<T>>(currents), bind_tau(ctx, store, l, ncfg), T(ncfg.theta),
                         T(ncfg.surrogate_width))
      .spikes;
}

/// Linear → BatchNorm → LTC-LIF applied step by step over a sequence.
template <class T>
std::vector<Var<T>> spiking_stage(const ForwardContext<T>& ctx, ParamStore<T>& store,
                                  const LinearLayer& fc, BnLayer<T>& bn, const LifLayer& lif,
                                  const NeuronConfig& ncfg, std::span<const Var<T>> inputs) {
  std::vector<Var<T>> currents;
  currents.reserve(inputs.size());
  for (const auto& x : inputs) currents.push_back(apply_bn(ctx, store, bn, apply_linear(ctx, store, fc, x)));
  return apply_lif(ctx, store, lif, ncfg, currents);
}

}  // namespace dista
