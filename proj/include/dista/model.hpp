#pragma once

// Full network: spiking patch embedding, L encoder blocks and a pooled
// linear classifier.
//
//   x_0        = LIF(BN(Linear(patches[t])))                  (binary)
//   y_l        = MDSSA(x_{l-1}) + x_{l-1}                     (residual sum)
//   x_l        = MLP(y_l) + y_l
//   logits     = Linear(mean over t and tokens of x_L)
//
// Residual junctions carry small non-negative integers; the next
// Linear → BN → LIF stage consumes them directly.

#include "dista/attention.hpp"

namespace dista {

enum class InputKind { image, sequence };

struct ModelConfig {
  std::size_t blocks = 1;        // L
  std::size_t dim = 32;          // D
  std::size_t timesteps = 8;     // T
  std::size_t tokens = 8;        // N
  std::size_t in_features = 8;   // per-token input width
  std::size_t num_classes = 4;
  std::size_t mlp_ratio = 4;
  InputKind input = InputKind::sequence;
  // image geometry (input == image)
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t patch_size = 4;

  AttentionConfig attention;
  std::size_t adn_blocks = 1;  // denoising active in blocks [0, adn_blocks)
  NeuronConfig neuron;

  /// Attention settings of block `l`.
  AttentionConfig block_attention(std::size_t l) const {
    AttentionConfig a = attention;
    a.adn_enabled = attention.adn_enabled && l < adn_blocks;
    return a;
  }

  void validate() const {
    if (blocks == 0 || dim == 0 || timesteps == 0 || num_classes == 0 || mlp_ratio == 0)
      throw ConfigError("model: blocks, dim, timesteps, num_classes and mlp_ratio must be positive");
    if (input == InputKind::image) {
      if (patch_size == 0 || image_size % patch_size != 0)
        throw ConfigError("model: image size " + std::to_string(image_size) +
                          " is not divisible by patch size " + std::to_string(patch_size));
      const std::size_t side = image_size / patch_size;
      if (tokens != side * side)
        throw ConfigError("model: token count must be (image_size/patch_size)^2 = " +
                          std::to_string(side * side));
      if (in_features != channels * patch_size * patch_size)
        throw ConfigError("model: in_features must be channels*patch_size^2");
    }
    if (adn_blocks > blocks) throw ConfigError("model: adn_blocks exceeds block count");
    attention.validate(dim, timesteps);
    if (!(neuron.theta > 0)) throw ConfigError("model: theta must be positive");
    if (!(neuron.surrogate_width > 0)) throw ConfigError("model: surrogate width must be positive");
    if (!(neuron.tau_init > 1)) throw ConfigError("model: tau_init must exceed 1");
  }

  /// Image geometry shortcut: N = (side/patch)², F = C·patch².
  static ModelConfig for_images(std::size_t image_size, std::size_t channels, std::size_t patch) {
    ModelConfig c;
    c.input = InputKind::image;
    c.image_size = image_size;
    c.channels = channels;
    c.patch_size = patch;
    if (patch == 0 || image_size % patch != 0)
      throw ConfigError("model: image size not divisible by patch size");
    const std::size_t side = image_size / patch;
    c.tokens = side * side;
    c.in_features = channels * patch * patch;
    return c;
  }
};

/// Closed-form count of learnable scalars; see README ("Parameter count").
inline std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.dim, n = c.tokens, f = c.in_features, w = c.attention.taw_size;
  const std::size_t h = c.mlp_ratio * d;
  const std::size_t embed = f * d + d + 2 * d + n * d;
  const std::size_t attn = 3 * w * d * d + 3 * n * d + d * d + d + 2 * d + n * d;
  const std::size_t mlp = d * h + h + 2 * h + n * h + h * d + d + 2 * d + n * d;
  const std::size_t head = d * c.num_classes + c.num_classes;
  return embed + c.blocks * (attn + mlp) + head;
}

template <class T>
struct EmbedParams {
  LinearLayer fc;
  BnLayer<T> bn;
  LifLayer lif;
};

template <class T>
struct MlpParams {
  LinearLayer fc1;
  BnLayer<T> bn1;
  LifLayer lif1;
  LinearLayer fc2;
  BnLayer<T> bn2;
  LifLayer lif2;
};

template <class T>
struct BlockParams {
  AttentionParams<T> attn;
  MlpParams<T> mlp;
};

/// Per-layer outputs of one forward pass, in execution order.
template <class T>
struct ModelTrace {
  std::vector<std::pair<std::string, std::vector<Var<T>>>> layers;

  void add(std::string name, std::span<const Var<T>> steps) {
    layers.emplace_back(std::move(name), std::vector<Var<T>>(steps.begin(), steps.end()));
  }
};

template <class T>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg_.dim, n = cfg_.tokens;
    embed_.fc = make_linear(store_, "embed.fc", cfg_.in_features, d, rng);
    embed_.bn = make_bn(store_, "embed.bn", d);
    embed_.lif = make_lif(store_, "embed.lif", n, d, cfg_.neuron);
    for (std::size_t l = 0; l < cfg_.blocks; ++l) {
      const std::string name = "block" + std::to_string(l);
      BlockParams<T> b;
      b.attn = make_attention(store_, name + ".attn", cfg_.block_attention(l), d, n, cfg_.neuron, rng);
      const std::size_t h = cfg_.mlp_ratio * d;
      b.mlp.fc1 = make_linear(store_, name + ".mlp.fc1", d, h, rng);
      b.mlp.bn1 = make_bn(store_, name + ".mlp.bn1", h);
      b.mlp.lif1 = make_lif(store_, name + ".mlp.lif1", n, h, cfg_.neuron);
      b.mlp.fc2 = make_linear(store_, name + ".mlp.fc2", h, d, rng);
      b.mlp.bn2 = make_bn(store_, name + ".mlp.bn2", d);
      b.mlp.lif2 = make_lif(store_, name + ".mlp.lif2", n, d, cfg_.neuron);
      blocks_.push_back(std::move(b));
    }
    head_ = make_linear(store_, "head", d, cfg_.num_classes, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  EmbedParams<T>& embed() { return embed_; }
  std::vector<BlockParams<T>>& blocks() { return blocks_; }
  const LinearLayer& head() const { return head_; }

  /// Every batch-norm layer with its running statistics, in a fixed order.
  std::vector<BnLayer<T>*> bn_layers() {
    std::vector<BnLayer<T>*> out{&embed_.bn};
    for (auto& b : blocks_) {
      out.push_back(&b.attn.out_bn);
      out.push_back(&b.mlp.bn1);
      out.push_back(&b.mlp.bn2);
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> store_;
  EmbedParams<T> embed_;
  std::vector<BlockParams<T>> blocks_;
  LinearLayer head_;
};

/// [B×C×H×W] images → [B·N × C·p²] patch rows; token order is row-major over
/// the patch grid, features are (channel, dy, dx).
template <class T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch) {
  if (images.rank() != 4) throw DimensionError("patchify: expected B×C×H×W, got " + shape_str(images.shape()));
  const std::size_t b = images.dim(0), c = images.dim(1), hgt = images.dim(2), wid = images.dim(3);
  if (patch == 0 || hgt % patch != 0 || wid % patch != 0)
    throw ConfigError("patchify: " + std::to_string(hgt) + "x" + std::to_string(wid) +
                      " image is not divisible into " + std::to_string(patch) + "-pixel patches");
  const std::size_t gy = hgt / patch, gx = wid / patch, n = gy * gx, f = c * patch * patch;
  Tensor<T> out({b * n, f});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t py = 0; py < gy; ++py)
      for (std::size_t px = 0; px < gx; ++px) {
        T* row = out.data() + (bi * n + py * gx + px) * f;
        std::size_t k = 0;
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t dy = 0; dy < patch; ++dy)
            for (std::size_t dx = 0; dx < patch; ++dx)
              row[k++] = images[((bi * c + ci) * hgt + py * patch + dy) * wid + px * patch + dx];
      }
  return out;
}

/// Stem over per-step input currents [B·N × F]: Linear → BN → LTC-LIF.
template <class T>
std::vector<Var<T>> embed_forward(const ForwardContext<T>& ctx, Model<T>& model,
                                  const std::vector<Tensor<T>>& steps) {
  const auto& cfg = model.config();
  std::vector<Var<T>> in;
  for (const auto& s : steps) {
    if (s.rank() != 2 || s.cols() != cfg.in_features || s.rows() % cfg.tokens != 0)
      throw DimensionError("embed: step shape " + shape_str(s.shape()) + " does not match " +
                           std::to_string(cfg.tokens) + " tokens x " + std::to_string(cfg.in_features) +
                           " features");
    in.push_back(ctx.tape->constant(s));
  }
  auto& e = model.embed();
  return spiking_stage(ctx, model.params(), e.fc, e.bn, e.lif, cfg.neuron, std::span<const Var<T>>(in));
}

/// Images presented as a constant input current at every step.
template <class T>
std::vector<Var<T>> patch_embed(const ForwardContext<T>& ctx, Model<T>& model, const Tensor<T>& images) {
  const auto& cfg = model.config();
  if (cfg.input != InputKind::image) throw ConfigError("patch_embed: model expects sequence input");
  if (images.rank() != 4 || images.dim(1) != cfg.channels || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.image_size)
    throw DimensionError("patch_embed: images " + shape_str(images.shape()) + " do not match config");
  const Tensor<T> patches = patchify(images, cfg.patch_size);
  return embed_forward(ctx, model, std::vector<Tensor<T>>(cfg.timesteps, patches));
}

template <class T>
std::vector<Var<T>> mlp_forward(const ForwardContext<T>& ctx, ParamStore<T>& store, MlpParams<T>& p,
                                const NeuronConfig& ncfg, std::span<const Var<T>> x) {
  auto hidden = spiking_stage(ctx, store, p.fc1, p.bn1, p.lif1, ncfg, x);
  return spiking_stage(ctx, store, p.fc2, p.bn2, p.lif2, ncfg, std::span<const Var<T>>(hidden));
}

template <class T>
std::vector<Var<T>> residual_add(std::span<const Var<T>> a, std::span<const Var<T>> b) {
  if (a.size() != b.size()) throw DimensionError("residual: sequence lengths differ");
  std::vector<Var<T>> out;
  for (std::size_t t = 0; t < a.size(); ++t) out.push_back(add(a[t], b[t]));
  return out;
}

template <class T>
std::vector<Var<T>> encoder_block_forward(const ForwardContext<T>& ctx, Model<T>& model, std::size_t l,
                                          std::span<const Var<T>> x, std::size_t batch,
                                          ModelTrace<T>* trace = nullptr) {
  const auto& cfg = model.config();
  auto& blk = model.blocks().at(l);
  const std::string name = "block" + std::to_string(l);
  auto attn = mdssa_forward(ctx, model.params(), blk.attn, cfg.block_attention(l), cfg.neuron, x,
                            batch, cfg.tokens);
  auto y = residual_add<T>(attn, x);
  auto mlp = mlp_forward(ctx, model.params(), blk.mlp, cfg.neuron, std::span<const Var<T>>(y));
  auto z = residual_add<T>(mlp, y);
  if (trace) {
    trace->add(name + ".attn", attn);
    trace->add(name + ".residual1", y);
    trace->add(name + ".mlp", mlp);
    trace->add(name + ".residual2", z);
  }
  return z;
}

template <class T>
Var<T> classifier_head(const ForwardContext<T>& ctx, Model<T>& model, std::span<const Var<T>> features,
                       std::size_t batch) {
  Var<T> pooled = mean_pool<T>(features, batch, model.config().tokens);
  return apply_linear(ctx, model.params(), model.head(), pooled);
}

/// Logits [B × classes] from per-step input currents [B·N × F]. The number
/// of steps is taken from the input, so truncated runs are possible.
template <class T>
Var<T> model_forward(const ForwardContext<T>& ctx, Model<T>& model, const std::vector<Tensor<T>>& steps,
                     std::size_t batch, ModelTrace<T>* trace = nullptr) {
  if (steps.empty()) throw DimensionError("model_forward: no time steps");
  auto x = embed_forward(ctx, model, steps);
  if (trace) trace->add("embed", x);
  for (std::size_t l = 0; l < model.config().blocks; ++l)
    x = encoder_block_forward(ctx, model, l, std::span<const Var<T>>(x), batch, trace);
  return classifier_head(ctx, model, std::span<const Var<T>>(x), batch);
}

}  // namespace dista
