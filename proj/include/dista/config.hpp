#pragma once

// Flat `key = value` run configuration. Lines starting with '#' and text
// after a '#' are comments. Unknown keys are rejected; absent keys keep the
// defaults listed in README.

#include <charconv>
#include <filesystem>
#include <functional>

#include "dista/data.hpp"
#include "dista/optim.hpp"

namespace dista {

enum class DatasetKind { synthetic, cifar10 };

struct RunConfig {
  ModelConfig model;
  TrainHyper train;
  DatasetKind dataset = DatasetKind::synthetic;
  std::string data_dir;
  CifarOptions cifar;
  SyntheticSpec synthetic;
  std::string out_dir = "out";
  std::size_t checkpoint_every = 1;
  std::size_t eval_batch_size = 100;
  double gradcheck_step = 1e-5;
  bool gradcheck_inject_tau_fault = false;
  // When the file does not set taw_size the window spans every step.
  bool taw_follows_timesteps = true;
  // When the file does not set adn_blocks every block denoises.
  bool adn_follows_blocks = true;

  /// Applies derived fields and checks cross-field constraints.
  void finalize() {
    if (taw_follows_timesteps) model.attention.taw_size = model.timesteps;
    if (adn_follows_blocks) model.adn_blocks = model.blocks;
    synthetic.timesteps = model.timesteps;
    if (dataset == DatasetKind::synthetic) {
      model.input = InputKind::sequence;
      model.tokens = synthetic.rows;
      model.in_features = synthetic.cols;
      model.num_classes = synthetic.num_classes;
    } else {
      const ModelConfig img = ModelConfig::for_images(kCifarSide, 3, model.patch_size);
      model.input = InputKind::image;
      model.image_size = img.image_size;
      model.channels = img.channels;
      model.tokens = img.tokens;
      model.in_features = img.in_features;
      model.num_classes = cifar.classes.empty() ? 10 : cifar.classes.size();
      if (data_dir.empty()) throw ConfigError("data_dir: required for dataset = cifar10");
    }
    if (model.attention.taw_size > model.timesteps)
      throw ConfigError("taw_size: " + std::to_string(model.attention.taw_size) + " exceeds timesteps = " +
                        std::to_string(model.timesteps));
    if (model.adn_blocks > model.blocks)
      throw ConfigError("adn_blocks: " + std::to_string(model.adn_blocks) + " exceeds blocks = " +
                        std::to_string(model.blocks));
    if (model.attention.heads == 0 || model.dim % model.attention.heads != 0)
      throw ConfigError("heads: " + std::to_string(model.attention.heads) + " does not divide dim = " +
                        std::to_string(model.dim));
    if (!(model.attention.denoise_threshold >= 0)) throw ConfigError("denoise_threshold: must be non-negative");
    if (checkpoint_every == 0) throw ConfigError("checkpoint_every: must be positive");
    if (eval_batch_size == 0) throw ConfigError("eval_batch_size: must be positive");
    try {
      model.validate();
      train.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class N>
N parse_number(const std::string& key, const std::string& text) {
  N v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc{} || r.ptr != text.data() + text.size())
    throw ConfigError(key + ": cannot parse '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= text.size() && !text.empty()) {
    const auto comma = text.find(',', start);
    out.push_back(parse_number<int>(key, trim(text.substr(start, comma - start))));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// Getters reuse the setter's reference accessor; they only read through it.
struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class N>
Field num(std::string key, std::function<N&(RunConfig&)> ref) {
  return {key,
          [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_number<N>(key, v); },
          [ref](const RunConfig& c) {
            const N v = ref(const_cast<RunConfig&>(c));
            if constexpr (std::is_floating_point_v<N>) return format_double(v);
            else return std::to_string(v);
          }};
}

inline Field flag(std::string key, std::function<bool&(RunConfig&)> ref) {
  return {key, [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); },
          [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

inline Field text(std::string key, std::function<std::string&(RunConfig&)> ref) {
  return {key, [ref](RunConfig& c, const std::string& v) { ref(c) = v; },
          [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back({"dataset",
                 [](RunConfig& c, const std::string& s) {
                   if (s == "synthetic") c.dataset = DatasetKind::synthetic;
                   else if (s == "cifar10") c.dataset = DatasetKind::cifar10;
                   else throw ConfigError("dataset: expected synthetic or cifar10, got '" + s + "'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.dataset == DatasetKind::synthetic ? "synthetic" : "cifar10");
                 }});
    v.push_back(text("data_dir", [](RunConfig& c) -> std::string& { return c.data_dir; }));
    v.push_back(text("out_dir", [](RunConfig& c) -> std::string& { return c.out_dir; }));
    // model
    v.push_back(num<std::size_t>("blocks", [](RunConfig& c) -> std::size_t& { return c.model.blocks; }));
    v.push_back(num<std::size_t>("dim", [](RunConfig& c) -> std::size_t& { return c.model.dim; }));
    v.push_back(num<std::size_t>("heads", [](RunConfig& c) -> std::size_t& { return c.model.attention.heads; }));
    v.push_back(num<std::size_t>("timesteps", [](RunConfig& c) -> std::size_t& { return c.model.timesteps; }));
    v.push_back({"taw_size",
                 [](RunConfig& c, const std::string& s) {
                   c.model.attention.taw_size = parse_number<std::size_t>("taw_size", s);
                   c.taw_follows_timesteps = false;
                 },
                 [](const RunConfig& c) { return std::to_string(c.model.attention.taw_size); }});
    v.push_back(num<double>("denoise_threshold",
                            [](RunConfig& c) -> double& { return c.model.attention.denoise_threshold; }));
    v.push_back(flag("adn_enabled", [](RunConfig& c) -> bool& { return c.model.attention.adn_enabled; }));
    v.push_back({"adn_blocks",
                 [](RunConfig& c, const std::string& s) {
                   c.model.adn_blocks = parse_number<std::size_t>("adn_blocks", s);
                   c.adn_follows_blocks = false;
                 },
                 [](const RunConfig& c) { return std::to_string(c.model.adn_blocks); }});
    v.push_back(num<double>("attn_scale", [](RunConfig& c) -> double& { return c.model.attention.attn_scale; }));
    v.push_back(num<std::size_t>("mlp_ratio", [](RunConfig& c) -> std::size_t& { return c.model.mlp_ratio; }));
    v.push_back(num<std::size_t>("patch_size", [](RunConfig& c) -> std::size_t& { return c.model.patch_size; }));
    v.push_back(num<double>("tau_init", [](RunConfig& c) -> double& { return c.model.neuron.tau_init; }));
    v.push_back(flag("learn_tau", [](RunConfig& c) -> bool& { return c.model.neuron.learn_tau; }));
    v.push_back(num<double>("theta", [](RunConfig& c) -> double& { return c.model.neuron.theta; }));
    v.push_back(num<double>("surrogate_width", [](RunConfig& c) -> double& { return c.model.neuron.surrogate_width; }));
    // training
    v.push_back(num<double>("lr", [](RunConfig& c) -> double& { return c.train.lr; }));
    v.push_back(num<double>("lr_floor_ratio", [](RunConfig& c) -> double& { return c.train.lr_floor_ratio; }));
    v.push_back(num<double>("beta1", [](RunConfig& c) -> double& { return c.train.beta1; }));
    v.push_back(num<double>("beta2", [](RunConfig& c) -> double& { return c.train.beta2; }));
    v.push_back(num<double>("adam_eps", [](RunConfig& c) -> double& { return c.train.adam_eps; }));
    v.push_back(num<double>("weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; }));
    v.push_back(num<double>("grad_clip", [](RunConfig& c) -> double& { return c.train.grad_clip; }));
    v.push_back(num<std::size_t>("epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; }));
    v.push_back(num<std::size_t>("batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }));
    v.push_back(num<std::uint64_t>("seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }));
    v.push_back(num<std::size_t>("checkpoint_every", [](RunConfig& c) -> std::size_t& { return c.checkpoint_every; }));
    v.push_back(num<std::size_t>("eval_batch_size", [](RunConfig& c) -> std::size_t& { return c.eval_batch_size; }));
    // data
    v.push_back({"cifar_classes",
                 [](RunConfig& c, const std::string& s) {
                   c.cifar.classes = parse_int_list("cifar_classes", s);
                   for (int k : c.cifar.classes)
                     if (k < 0 || k > 9) throw ConfigError("cifar_classes: label " + std::to_string(k) + " outside 0..9");
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.cifar.classes.size(); ++i)
                     out += (i ? "," : "") + std::to_string(c.cifar.classes[i]);
                   return out;
                 }});
    v.push_back(num<std::size_t>("train_limit", [](RunConfig& c) -> std::size_t& { return c.cifar.train_limit; }));
    v.push_back(num<std::size_t>("test_limit", [](RunConfig& c) -> std::size_t& { return c.cifar.test_limit; }));
    v.push_back(num<std::size_t>("synthetic_classes", [](RunConfig& c) -> std::size_t& { return c.synthetic.num_classes; }));
    v.push_back(num<std::size_t>("synthetic_frames", [](RunConfig& c) -> std::size_t& { return c.synthetic.num_frames; }));
    v.push_back(num<std::size_t>("synthetic_rows", [](RunConfig& c) -> std::size_t& { return c.synthetic.rows; }));
    v.push_back(num<std::size_t>("synthetic_cols", [](RunConfig& c) -> std::size_t& { return c.synthetic.cols; }));
    v.push_back(num<double>("synthetic_noise", [](RunConfig& c) -> double& { return c.synthetic.noise_rate; }));
    v.push_back(num<double>("synthetic_density", [](RunConfig& c) -> double& { return c.synthetic.frame_density; }));
    v.push_back(flag("synthetic_random_phase", [](RunConfig& c) -> bool& { return c.synthetic.random_phase; }));
    v.push_back(num<std::size_t>("synthetic_train", [](RunConfig& c) -> std::size_t& { return c.synthetic.train_count; }));
    v.push_back(num<std::size_t>("synthetic_test", [](RunConfig& c) -> std::size_t& { return c.synthetic.test_count; }));
    v.push_back(num<std::uint64_t>("synthetic_seed", [](RunConfig& c) -> std::uint64_t& { return c.synthetic.seed; }));
    // gradient check
    v.push_back(num<double>("gradcheck_step", [](RunConfig& c) -> double& { return c.gradcheck_step; }));
    v.push_back(flag("gradcheck_inject_tau_fault", [](RunConfig& c) -> bool& { return c.gradcheck_inject_tau_fault; }));
    return v;
  }();
  return f;
}

}  // namespace detail

/// Sets one key; used by the parser and by ablation sweeps.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields())
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  throw ConfigError(key + ": unknown key");
}

inline RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string l = detail::trim(line);
    if (l.empty()) continue;
    const auto eq = l.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(std::string_view(l).substr(0, eq));
    const std::string value = detail::trim(std::string_view(l).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    set_config_value(cfg, key, value);
  }
  cfg.finalize();
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

/// Canonical text form: every key in a fixed order. Parsing it gives back
/// the same configuration.
inline std::string render_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : detail::fields()) {
    if (f.key == "taw_size" && cfg.taw_follows_timesteps) continue;
    if (f.key == "adn_blocks" && cfg.adn_follows_blocks) continue;
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace dista
