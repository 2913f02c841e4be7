#pragma once

// Spiking self-attention with a temporal attention window (TAW) and
// attention denoising (ADN).
//
// Query/key/value currents at step t mix the block input over the last
// taw_size steps, one D×D matrix per time offset:
//
//   I[t] = Σ_{m=0}^{min(taw, t+1)−1} s[t−m] × W^(m)
//
// The three currents drive LTC-LIF arrays whose binary outputs form the
// per-step, per-head attention map A = Q[t]·K[t]ᵀ. Entries below the
// threshold u are zeroed, the map is applied to V and scaled, and a
// Linear → BatchNorm → LTC-LIF stage re-binarises the result.

#include <array>

#include "dista/layers.hpp"

namespace dista {

enum class QkvPath : std::size_t { query = 0, key = 1, value = 2 };

inline const char* path_name(std::size_t p) {
  static constexpr const char* names[] = {"q", "k", "v"};
  return names[p];
}

template <class T>
struct TawWeights {
  // per_offset[path][m] is the D×D matrix for time offset m.
  std::array<std::vector<Tensor<T>>, 3> per_offset;

  std::size_t taw_size() const { return per_offset[0].size(); }
};

struct AttentionConfig {
  std::size_t taw_size = 1;
  double denoise_threshold = 3.0;
  bool adn_enabled = true;
  std::size_t heads = 1;
  double attn_scale = 0.125;

  std::size_t head_dim(std::size_t dim) const {
    if (heads == 0 || dim % heads != 0)
      throw ConfigError("attention: dim " + std::to_string(dim) + " is not divisible by " +
                        std::to_string(heads) + " heads");
    return dim / heads;
  }

  void validate(std::size_t dim, std::size_t timesteps) const {
    head_dim(dim);
    if (taw_size < 1) throw ConfigError("taw_size must be at least 1");
    if (taw_size > timesteps)
      throw ConfigError("taw_size " + std::to_string(taw_size) + " exceeds timesteps " +
                        std::to_string(timesteps));
    if (!(denoise_threshold >= 0)) throw ConfigError("denoise_threshold must be non-negative");
  }
};

/// Input current of one Q/K/V array at step t. `prev_spikes` holds the
/// block input for steps 0..t (later steps are never read).
template <class T>
Var<T> taw_input(std::span<const Var<T>> prev_spikes, std::span<const Var<T>> weights,
                 std::size_t t) {
  if (weights.empty()) throw ConfigError("taw_size must be at least 1");
  if (t >= prev_spikes.size()) throw DimensionError("taw_input: step beyond sequence");
  const std::size_t terms = std::min(weights.size(), t + 1);
  std::vector<Var<T>> xs, ws;
  xs.reserve(terms);
  ws.reserve(terms);
  for (std::size_t m = 0; m < terms; ++m) {
    xs.push_back(prev_spikes[t - m]);
    ws.push_back(weights[m]);
  }
  return matmul_sum<T>(xs, ws);
}

template <class T>
Tensor<T> taw_input(const SpikeSequence<T>& prev_spikes, const TawWeights<T>& weights,
                    std::size_t t, QkvPath path) {
  const auto& ws = weights.per_offset[static_cast<std::size_t>(path)];
  if (ws.empty()) throw ConfigError("taw_size must be at least 1");
  Tape<T> tape(false);
  std::vector<Var<T>> xs, wv;
  for (std::size_t s = 0; s <= t && s < prev_spikes.timesteps(); ++s)
    xs.push_back(tape.constant(prev_spikes.steps[s]));
  for (const auto& w : ws) wv.push_back(tape.constant(w));
  return taw_input<T>(xs, wv, t).value();
}

/// A = Q·Kᵀ for binary Q[N×d], K[N×d]; entries count coincident spikes.
template <class T>
Tensor<T> attention_map(const Tensor<T>& q, const Tensor<T>& k) {
  require_matrix(q.shape(), "attention_map q");
  require_matrix(k.shape(), "attention_map k");
  if (q.cols() != k.cols()) throw DimensionError("attention_map: feature widths differ");
  if (!is_binary(q) || !is_binary(k)) throw ContractError("attention_map: inputs must be binary");
  return matmul(q, transpose(k));
}

/// Zeroes entries below u; one comparison per entry.
template <class T>
Tensor<T> denoise(const Tensor<T>& a, T u, std::uint64_t* comparisons = nullptr) {
  if (!(u >= T(0))) throw ConfigError("denoise threshold must be non-negative");
  Tensor<T> out = a;
  for (auto& v : out.values())
    if (v < u) v = T(0);
  if (comparisons) *comparisons += a.size();
  return out;
}

struct AttentionGeometry {
  std::size_t batch = 1;
  std::size_t tokens = 1;
  std::size_t heads = 1;
};

/// Multi-head spiking attention for one step: per batch element and head,
/// out = (f(Q_h K_hᵀ) · V_h) · scale, heads written side by side.
/// q, k, v are [B·N × D]; f is the denoiser when `adn` is set.
template <class T>
Var<T> spiking_attention(Var<T> q, Var<T> k, Var<T> v, AttentionGeometry geo, bool adn, T u,
                         T scale, bool require_binary, std::uint64_t* comparisons = nullptr) {
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  const std::size_t n = geo.tokens;
  const std::size_t dim = qv.cols();
  if (qv.shape() != kv.shape() || qv.shape() != vv.shape() || qv.rows() != geo.batch * n)
    throw DimensionError("spiking_attention: q/k/v shapes " + shape_str(qv.shape()) + ", " +
                         shape_str(kv.shape()) + ", " + shape_str(vv.shape()));
  if (geo.heads == 0 || dim % geo.heads != 0)
    throw ConfigError("spiking_attention: dim not divisible by heads");
  if (require_binary && (!is_binary(qv) || !is_binary(kv)))
    throw ContractError("spiking_attention: query/key spikes must be binary");
  const std::size_t d = dim / geo.heads;
  const std::size_t maps = geo.batch * geo.heads;

  // masked maps, [maps × N × N]; keep[i] = 0 where the denoiser zeroed
  Tensor<T> amap({maps, n, n});
  std::vector<std::uint8_t> keep(adn ? maps * n * n : 0, 1);
  Tensor<T> out(qv.shape());
  for (std::size_t b = 0; b < geo.batch; ++b)
    for (std::size_t h = 0; h < geo.heads; ++h) {
      T* a = amap.data() + (b * geo.heads + h) * n * n;
      const std::size_t c0 = h * d;
      for (std::size_t i = 0; i < n; ++i) {
        const T* qi = qv.data() + (b * n + i) * dim + c0;
        for (std::size_t j = 0; j < n; ++j) {
          const T* kj = kv.data() + (b * n + j) * dim + c0;
          T acc = 0;
          for (std::size_t c = 0; c < d; ++c) acc += qi[c] * kj[c];
          a[i * n + j] = acc;
        }
      }
      if (adn) {
        std::uint8_t* kp = keep.data() + (b * geo.heads + h) * n * n;
        for (std::size_t e = 0; e < n * n; ++e)
          if (a[e] < u) {
            a[e] = T(0);
            kp[e] = 0;
          }
        if (comparisons) *comparisons += n * n;
      }
      for (std::size_t i = 0; i < n; ++i) {
        T* oi = out.data() + (b * n + i) * dim + c0;
        for (std::size_t j = 0; j < n; ++j) {
          const T aij = a[i * n + j];
          if (aij == T(0)) continue;
          const T* vj = vv.data() + (b * n + j) * dim + c0;
          for (std::size_t c = 0; c < d; ++c) oi[c] += aij * vj[c];
        }
        for (std::size_t c = 0; c < d; ++c) oi[c] *= scale;
      }
    }

  return q.tape->record(
      std::move(out), {q, k, v},
      [q, k, v, geo, d, n, dim, scale, amap = std::move(amap), keep = std::move(keep)](
          Tape<T>& tape, const Tensor<T>& g) {
        const auto& qv = q.value();
        const auto& kv = k.value();
        const auto& vv = v.value();
        Tensor<T>* gq = q.requires_grad() ? &tape.grad(q) : nullptr;
        Tensor<T>* gk = k.requires_grad() ? &tape.grad(k) : nullptr;
        Tensor<T>* gv = v.requires_grad() ? &tape.grad(v) : nullptr;
        std::vector<T> da(n * n);
        for (std::size_t b = 0; b < geo.batch; ++b)
          for (std::size_t h = 0; h < geo.heads; ++h) {
            const std::size_t mi = b * geo.heads + h;
            const T* a = amap.data() + mi * n * n;
            const std::size_t c0 = h * d;
            // dV_j += Σ_i a_ij · scale · g_i
            if (gv)
              for (std::size_t i = 0; i < n; ++i) {
                const T* gi = g.data() + (b * n + i) * dim + c0;
                for (std::size_t j = 0; j < n; ++j) {
                  const T aij = a[i * n + j] * scale;
                  if (aij == T(0)) continue;
                  T* gvj = gv->data() + (b * n + j) * dim + c0;
                  for (std::size_t c = 0; c < d; ++c) gvj[c] += aij * gi[c];
                }
              }
            if (!gq && !gk) continue;
            // dA_ij = scale · g_i · v_j, zero where the denoiser cut the entry
            for (std::size_t i = 0; i < n; ++i) {
              const T* gi = g.data() + (b * n + i) * dim + c0;
              for (std::size_t j = 0; j < n; ++j) {
                const T* vj = vv.data() + (b * n + j) * dim + c0;
                T acc = 0;
                for (std::size_t c = 0; c < d; ++c) acc += gi[c] * vj[c];
                const bool kept = keep.empty() || keep[mi * n * n + i * n + j];
                da[i * n + j] = kept ? acc * scale : T(0);
              }
            }
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < n; ++j) {
                const T dij = da[i * n + j];
                if (dij == T(0)) continue;
                if (gq) {
                  T* gqi = gq->data() + (b * n + i) * dim + c0;
                  const T* kj = kv.data() + (b * n + j) * dim + c0;
                  for (std::size_t c = 0; c < d; ++c) gqi[c] += dij * kj[c];
                }
                if (gk) {
                  T* gkj = gk->data() + (b * n + j) * dim + c0;
                  const T* qi = qv.data() + (b * n + i) * dim + c0;
                  for (std::size_t c = 0; c < d; ++c) gkj[c] += dij * qi[c];
                }
              }
          }
      });
}

template <class T>
struct AttentionParams {
  std::array<std::vector<std::size_t>, 3> taw;  // [path][offset] parameter ids
  std::array<LifLayer, 3> qkv_lif;
  LinearLayer out;
  BnLayer<T> out_bn;
  LifLayer out_lif;
};

/// Registers the parameters of one attention layer. TAW matrices are drawn
/// from N(0, 2/(D·taw_size)).
template <class T>
AttentionParams<T> make_attention(ParamStore<T>& store, const std::string& name,
                                  const AttentionConfig& cfg, std::size_t dim, std::size_t tokens,
                                  const NeuronConfig& ncfg, std::mt19937_64& rng) {
  AttentionParams<T> p;
  const double sd = std::sqrt(2.0 / static_cast<double>(dim * cfg.taw_size));
  for (std::size_t path = 0; path < 3; ++path)
    for (std::size_t m = 0; m < cfg.taw_size; ++m)
      p.taw[path].push_back(store.add(name + ".taw_" + path_name(path) + "." + std::to_string(m),
                                      ParamKind::weight, gaussian<T>({dim, dim}, sd, rng)));
  for (std::size_t path = 0; path < 3; ++path)
    p.qkv_lif[path] = make_lif(store, name + ".lif_" + path_name(path), tokens, dim, ncfg);
  p.out = make_linear(store, name + ".out", dim, dim, rng);
  p.out_bn = make_bn(store, name + ".out_bn", dim);
  p.out_lif = make_lif(store, name + ".out_lif", tokens, dim, ncfg);
  return p;
}

template <class T>
TawWeights<T> taw_weights(const ParamStore<T>& store, const AttentionParams<T>& p) {
  TawWeights<T> w;
  for (std::size_t path = 0; path < 3; ++path)
    for (std::size_t id : p.taw[path]) w.per_offset[path].push_back(store[id].value);
  return w;
}

/// Intermediate spikes of one attention layer, for inspection in tests.
template <class T>
struct AttentionProbe {
  std::array<std::vector<Var<T>>, 3> qkv;
  std::vector<Var<T>> attended;  // scaled A·V per step, before the output stage
};

/// Multi-head attention layer over a whole sequence. `x[t]` is the block
/// input at step t, shaped [B·N × D] (binary, or small non-negative
/// integers at residual junctions).
template <class T>
std::vector<Var<T>> mdssa_forward(const ForwardContext<T>& ctx, ParamStore<T>& store,
                                  AttentionParams<T>& p, const AttentionConfig& cfg,
                                  const NeuronConfig& ncfg, std::span<const Var<T>> x,
                                  std::size_t batch, std::size_t tokens,
                                  AttentionProbe<T>* probe = nullptr) {
  if (x.empty()) throw DimensionError("mdssa_forward: empty sequence");
  const std::size_t dim = x[0].value().cols();
  // A run may be shorter than the window (truncated runs); the window then
  // only reaches back to step 0.
  cfg.validate(dim, std::max(x.size(), cfg.taw_size));
  if (p.taw[0].size() != cfg.taw_size)
    throw ConfigError("mdssa_forward: layer holds " + std::to_string(p.taw[0].size()) +
                      " TAW matrices per path, config asks for " + std::to_string(cfg.taw_size));
  for (const auto& s : x)
    if (s.value().rows() != batch * tokens || s.value().cols() != dim)
      throw DimensionError("mdssa_forward: step shape " + shape_str(s.shape()));

  std::array<std::vector<Var<T>>, 3> qkv;
  for (std::size_t path = 0; path < 3; ++path) {
    std::vector<Var<T>> w;
    for (std::size_t id : p.taw[path]) w.push_back(bind(ctx, store, id));
    std::vector<Var<T>> currents;
    for (std::size_t t = 0; t < x.size(); ++t) currents.push_back(taw_input<T>(x, w, t));
    qkv[path] = apply_lif(ctx, store, p.qkv_lif[path], ncfg, currents);
  }

  const AttentionGeometry geo{batch, tokens, cfg.heads};
  std::vector<Var<T>> attended;
  for (std::size_t t = 0; t < x.size(); ++t)
    attended.push_back(spiking_attention(qkv[0][t], qkv[1][t], qkv[2][t], geo, cfg.adn_enabled,
                                         T(cfg.denoise_threshold), T(cfg.attn_scale),
                                         ctx.spike == SpikeMode::hard, ctx.comparisons));
  if (probe) {
    probe->qkv = qkv;
    probe->attended = attended;
  }
  return spiking_stage(ctx, store, p.out, p.out_bn, p.out_lif, ncfg,
                       std::span<const Var<T>>(attended));
}

/// Single-head form.
template <class T>
std::vector<Var<T>> dssa_forward(const ForwardContext<T>& ctx, ParamStore<T>& store,
                                 AttentionParams<T>& p, const AttentionConfig& cfg,
                                 const NeuronConfig& ncfg, std::span<const Var<T>> x,
                                 std::size_t batch, std::size_t tokens,
                                 AttentionProbe<T>* probe = nullptr) {
  if (cfg.heads != 1) throw ConfigError("dssa_forward is the single-head layer");
  return mdssa_forward(ctx, store, p, cfg, ncfg, x, batch, tokens, probe);
}

}  // namespace dista
