#pragma once

// Reverse-mode gradient tape over dense tensors.
//
// A Tape is an append-only record of primitive operations. Each recorded
// node owns its output value and, when gradients are being recorded, a
// closure that pushes the node's output gradient to its inputs. Node ids
// are assigned in creation order, so the record is topological by
// construction and a single reverse sweep visits every node once.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dista/tensor.hpp"

namespace dista {

enum class ParamKind : std::uint8_t { weight = 0, bias = 1, bn_gamma = 2, bn_beta = 3, tau = 4 };

template <class T>
struct Parameter {
  std::string name;
  ParamKind kind = ParamKind::weight;
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

template <class T>
using GradientMap = std::map<std::string, Tensor<T>>;

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>&)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, nullptr); }

  /// A free leaf whose gradient is wanted (used by tests and oracles).
  Var<T> leaf(Tensor<T> value) { return push(std::move(value), record_, nullptr, nullptr); }

  /// Leaf bound to a learnable parameter. Watching the same parameter twice
  /// returns the same node so gradients from all uses meet in one place.
  Var<T> watch(Parameter<T>& p) {
    if (auto it = watched_.find(&p); it != watched_.end()) return {this, it->second};
    Var<T> v = push(p.value, record_, nullptr, &p);
    watched_.emplace(&p, v.id);
    return v;
  }

  /// Records an operation. `fn` receives the output gradient; it is dropped
  /// when no input needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward fn) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, Backward fn) {
    bool needs = false;
    if (record_)
      for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : Backward{}, nullptr);
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }

  /// Gradient accumulator of a node, zero-initialised on first access.
  Tensor<T>& grad(Var<T> v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  /// Reverse sweep from `loss`, seeded with `seed`.
  void backward(Var<T> loss, const Tensor<T>& seed) {
    if (nodes_[loss.id].value.size() != 1)
      throw ContractError("backward: loss must be scalar, got shape " +
                          shape_str(nodes_[loss.id].value.shape()));
    if (seed.size() != 1) throw ContractError("backward: seed must be scalar");
    if (!record_) throw ContractError("backward: tape was not recording gradients");
    grad(loss)[0] += seed[0];
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  /// Leaves bound to parameters, in watch order.
  std::vector<std::pair<Parameter<T>*, Var<T>>> watched() const {
    std::vector<std::pair<Parameter<T>*, Var<T>>> out;
    for (std::size_t id = 0; id < nodes_.size(); ++id)
      if (nodes_[id].param) out.emplace_back(nodes_[id].param, Var<T>{const_cast<Tape*>(this), id});
    return out;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(Tensor<T> value, bool needs_grad, Backward fn, Parameter<T>* param) {
    nodes_.push_back(Node{std::move(value), {}, needs_grad, std::move(fn), param});
    return {this, nodes_.size() - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> watched_;
};

/// Runs the reverse sweep and returns ∂L/∂p for every parameter the tape
/// watched. The gradients are also added into each Parameter::grad.
template <class T>
GradientMap<T> reverse_accumulate(Tape<T>& tape, Var<T> loss, const Tensor<T>& seed_loss_grad) {
  tape.backward(loss, seed_loss_grad);
  GradientMap<T> out;
  for (auto& [param, var] : tape.watched()) {
    Tensor<T> g = tape.grad(var);
    if (param->grad.shape() != param->value.shape()) param->zero_grad();
    for (std::size_t i = 0; i < g.size(); ++i) param->grad[i] += g[i];
    out.emplace(param->name, std::move(g));
  }
  return out;
}

template <class T>
GradientMap<T> reverse_accumulate(Tape<T>& tape, Var<T> loss) {
  return reverse_accumulate(tape, loss, Tensor<T>::scalar(T(1)));
}

namespace detail {

template <class T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  detail::add_into(out, b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    if (a.requires_grad()) detail::add_into(tape.grad(a), g);
    if (b.requires_grad()) detail::add_into(tape.grad(b), g);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    if (a.requires_grad()) detail::add_into(tape.grad(a), g);
    if (b.requires_grad()) {
      auto& gb = tape.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (a.requires_grad()) {
      auto& ga = tape.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto& gb = tape.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  return a.tape->record(std::move(out), {a}, [a, factor](Tape<T>& tape, const Tensor<T>& g) {
    auto& ga = tape.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  T total = 0;
  for (T v : a.value().values()) total += v;
  return a.tape->record(Tensor<T>::scalar(total), {a}, [a](Tape<T>& tape, const Tensor<T>& g) {
    auto& ga = tape.grad(a);
    for (auto& v : ga.values()) v += g[0];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tensor<T> out = matmul(a.value(), b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (a.requires_grad()) {
      const Tensor<T> bt = transpose(bv);
      matmul_accumulate(g.data(), bt.data(), tape.grad(a).data(), g.rows(), g.cols(), bt.cols());
    }
    if (b.requires_grad())
      matmul_tn_accumulate(av.data(), g.data(), tape.grad(b).data(), av.rows(), av.cols(),
                           g.cols());
  });
}

/// Σ_m xs[m] × ws[m], accumulated term by term in index order.
template <class T>
Var<T> matmul_sum(std::span<const Var<T>> xs, std::span<const Var<T>> ws) {
  if (xs.empty() || xs.size() != ws.size())
    throw DimensionError("matmul_sum: need equally many (>0) inputs and weights");
  const std::size_t m = xs[0].shape().at(0);
  const std::size_t p = ws[0].shape().at(1);
  Tensor<T> out({m, p});
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const auto& x = xs[t].value();
    const auto& w = ws[t].value();
    require_matrix(x.shape(), "matmul_sum input");
    require_matrix(w.shape(), "matmul_sum weight");
    if (x.rows() != m || x.cols() != w.rows() || w.cols() != p)
      throw DimensionError("matmul_sum: term " + std::to_string(t) + " has shapes " +
                           shape_str(x.shape()) + " x " + shape_str(w.shape()));
    matmul_accumulate(x.data(), w.data(), out.data(), m, x.cols(), p);
  }
  std::vector<Var<T>> inputs(xs.begin(), xs.end());
  inputs.insert(inputs.end(), ws.begin(), ws.end());
  const std::size_t terms = xs.size();
  return xs[0].tape->record(
      std::move(out), std::span<const Var<T>>(inputs),
      [inputs, terms](Tape<T>& tape, const Tensor<T>& g) {
        for (std::size_t t = 0; t < terms; ++t) {
          const Var<T> x = inputs[t];
          const Var<T> w = inputs[terms + t];
          const auto& xv = x.value();
          const auto& wv = w.value();
          if (x.requires_grad()) {
            const Tensor<T> wt = transpose(wv);
            matmul_accumulate(g.data(), wt.data(), tape.grad(x).data(), g.rows(), g.cols(),
                              wt.cols());
          }
          if (w.requires_grad())
            matmul_tn_accumulate(xv.data(), g.data(), tape.grad(w).data(), xv.rows(),
                                 xv.cols(), g.cols());
        }
      });
}

/// x[R×C] + b[C] broadcast over rows.
template <class T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  const auto& xv = x.value();
  const auto& bv = b.value();
  require_matrix(xv.shape(), "add_bias");
  if (bv.size() != xv.cols()) throw DimensionError("add_bias: bias length mismatch");
  Tensor<T> out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  return x.tape->record(std::move(out), {x, b}, [x, b](Tape<T>& tape, const Tensor<T>& g) {
    if (x.requires_grad()) detail::add_into(tape.grad(x), g);
    if (b.requires_grad()) {
      auto& gb = tape.grad(b);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
    }
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_bias(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Pooling and loss
// ---------------------------------------------------------------------------

/// Mean over time steps and tokens: steps[t] is [B·N × D], result [B × D].
template <class T>
Var<T> mean_pool(std::span<const Var<T>> steps, std::size_t batch, std::size_t tokens) {
  if (steps.empty()) throw DimensionError("mean_pool: no time steps");
  const std::size_t d = steps[0].value().cols();
  for (const auto& s : steps)
    if (s.value().rows() != batch * tokens || s.value().cols() != d)
      throw DimensionError("mean_pool: step shape " + shape_str(s.shape()));
  Tensor<T> out({batch, d});
  for (const auto& s : steps) {
    const auto& v = s.value();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t n = 0; n < tokens; ++n)
        for (std::size_t c = 0; c < d; ++c) out(b, c) += v(b * tokens + n, c);
  }
  const T denom = static_cast<T>(steps.size() * tokens);
  for (auto& v : out.values()) v /= denom;
  std::vector<Var<T>> inputs(steps.begin(), steps.end());
  return steps[0].tape->record(
      std::move(out), std::span<const Var<T>>(inputs),
      [inputs, batch, tokens, d, denom](Tape<T>& tape, const Tensor<T>& g) {
        for (const auto& s : inputs) {
          if (!s.requires_grad()) continue;
          auto& gs = tape.grad(s);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t n = 0; n < tokens; ++n)
              for (std::size_t c = 0; c < d; ++c) gs(b * tokens + n, c) += g(b, c) / denom;
        }
      });
}

/// Mean softmax cross-entropy over the batch.
template <class T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& labels) {
  const auto& z = logits.value();
  require_matrix(z.shape(), "cross_entropy");
  if (labels.size() != z.rows()) throw DimensionError("cross_entropy: label count mismatch");
  const std::size_t b = z.rows();
  const std::size_t c = z.cols();
  Tensor<T> prob({b, c});
  T loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      throw ContractError("cross_entropy: label out of range");
    T mx = z(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z(i, j));
    T denom = 0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(z(i, j) - mx);
    const T log_denom = std::log(denom);
    for (std::size_t j = 0; j < c; ++j) prob(i, j) = std::exp(z(i, j) - mx - log_denom);
    loss += -(z(i, static_cast<std::size_t>(labels[i])) - mx - log_denom);
  }
  loss /= static_cast<T>(b);
  return logits.tape->record(
      Tensor<T>::scalar(loss), {logits},
      [logits, prob = std::move(prob), labels, b, c](Tape<T>& tape, const Tensor<T>& g) {
        auto& gl = tape.grad(logits);
        const T s = g[0] / static_cast<T>(b);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < c; ++j)
            gl(i, j) += s * (prob(i, j) - (static_cast<std::size_t>(labels[i]) == j ? T(1) : T(0)));
      });
}

}  // namespace dista
