#pragma once

// Dataset ingestion and input encoding: the CIFAR-10 binary batch format,
// constant-current image encoding, and a synthetic dataset whose classes
// differ only in the temporal order of shared frames.

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "dista/model.hpp"

namespace dista {

struct Sample {
  Tensor<float> input;  // C×H×W image in [0,1], or T×N×F sequence
  int label = 0;
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct Dataset {
  InputKind kind = InputKind::sequence;
  std::size_t num_classes = 0;
  std::vector<Sample> train;
  std::vector<Sample> test;
  ChannelStats stats;  // images only
};

// ---------------------------------------------------------------- CIFAR-10

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecord = 1 + kCifarPixels;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

namespace detail {

inline std::size_t cifar_record_count(std::span<const std::uint8_t> bytes, std::size_t expected_records) {
  if (bytes.size() % kCifarRecord != 0)
    throw FormatError("cifar10: " + std::to_string(bytes.size()) + " bytes is not a whole number of " +
                      std::to_string(kCifarRecord) + "-byte records");
  const std::size_t n = bytes.size() / kCifarRecord;
  if (expected_records != 0 && n != expected_records)
    throw FormatError("cifar10: expected " + std::to_string(expected_records) + " records, found " +
                      std::to_string(n));
  return n;
}

inline Sample cifar_sample(const std::uint8_t* rec) {
  Sample s{Tensor<float>({3, kCifarSide, kCifarSide}), rec[0]};
  for (std::size_t k = 0; k < kCifarPixels; ++k) s.input[k] = static_cast<float>(rec[1 + k]) / 255.0f;
  return s;
}

}  // namespace detail

/// Parses a buffer of 3073-byte records. `expected_records` of 0 accepts any
/// whole number of records.
inline std::vector<Sample> parse_cifar10(std::span<const std::uint8_t> bytes,
                                         std::size_t expected_records = 0) {
  const std::size_t n = detail::cifar_record_count(bytes, expected_records);
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecord;
    if (rec[0] > 9)
      throw DataError("cifar10: record " + std::to_string(i) + " has label " + std::to_string(rec[0]));
    out.push_back(detail::cifar_sample(rec));
  }
  return out;
}

/// Inverse of parse_cifar10 for images that came from it.
inline std::vector<std::uint8_t> serialize_cifar10(const std::vector<Sample>& samples) {
  std::vector<std::uint8_t> out;
  out.reserve(samples.size() * kCifarRecord);
  for (const auto& s : samples) {
    if (s.input.size() != kCifarPixels || s.label < 0 || s.label > 255)
      throw DataError("serialize_cifar10: sample is not a CIFAR record");
    out.push_back(static_cast<std::uint8_t>(s.label));
    for (float v : s.input.values())
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  }
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

inline ChannelStats channel_stats(const std::vector<Sample>& images) {
  if (images.empty()) throw DataError("channel_stats: no images");
  const std::size_t c = images.front().input.dim(0);
  const std::size_t plane = images.front().input.size() / c;
  ChannelStats st{std::vector<double>(c), std::vector<double>(c)};
  std::vector<double> sq(c);
  for (const auto& s : images)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t k = 0; k < plane; ++k) {
        const double v = s.input[ci * plane + k];
        st.mean[ci] += v;
        sq[ci] += v * v;
      }
  const double count = static_cast<double>(images.size() * plane);
  for (std::size_t ci = 0; ci < c; ++ci) {
    st.mean[ci] /= count;
    st.stddev[ci] = std::sqrt(std::max(sq[ci] / count - st.mean[ci] * st.mean[ci], 1e-12));
  }
  return st;
}

struct CifarOptions {
  std::vector<int> classes;      // empty keeps all ten; otherwise relabelled 0..k-1
  std::size_t train_limit = 0;   // 0 keeps everything
  std::size_t test_limit = 0;
};

/// Loads data_batch_1..5.bin and test_batch.bin from `dir`. Every record is
/// validated; only the selected ones are decoded.
inline Dataset load_cifar10(const std::filesystem::path& dir, const CifarOptions& opt = {}) {
  for (int k : opt.classes)
    if (k < 0 || k > 9) throw ConfigError("cifar10: class " + std::to_string(k) + " outside 0..9");
  auto take = [&](const std::filesystem::path& file, std::size_t limit, std::vector<Sample>& out) {
    const auto bytes = read_file(file);
    const std::size_t n = detail::cifar_record_count(bytes, kCifarRecordsPerFile);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t* rec = bytes.data() + i * kCifarRecord;
      if (rec[0] > 9)
        throw DataError("cifar10: " + file.filename().string() + " record " + std::to_string(i) + " has label " +
                        std::to_string(rec[0]));
      if (limit != 0 && out.size() >= limit) continue;
      int label = rec[0];
      if (!opt.classes.empty()) {
        auto it = std::find(opt.classes.begin(), opt.classes.end(), label);
        if (it == opt.classes.end()) continue;
        label = static_cast<int>(it - opt.classes.begin());
      }
      Sample s = detail::cifar_sample(rec);
      s.label = label;
      out.push_back(std::move(s));
    }
  };
  Dataset ds;
  ds.kind = InputKind::image;
  ds.num_classes = opt.classes.empty() ? 10 : opt.classes.size();
  for (int b = 1; b <= 5; ++b) take(dir / ("data_batch_" + std::to_string(b) + ".bin"), opt.train_limit, ds.train);
  take(dir / "test_batch.bin", opt.test_limit, ds.test);
  if (ds.train.empty() || ds.test.empty()) throw DataError("cifar10: selection left an empty split");
  ds.stats = channel_stats(ds.train);
  return ds;
}

/// Per-channel standardisation of one C×H×W image.
template <class T>
Tensor<T> standardize(const Tensor<float>& image, const ChannelStats& stats) {
  const std::size_t c = image.dim(0);
  if (stats.mean.size() != c) throw DimensionError("standardize: channel count mismatch");
  const std::size_t plane = image.size() / c;
  Tensor<T> out(image.shape());
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t k = 0; k < plane; ++k)
      out[ci * plane + k] = static_cast<T>((image[ci * plane + k] - stats.mean[ci]) / stats.stddev[ci]);
  return out;
}

/// Direct encoding: the standardised image is the input current at every step.
template <class T>
std::vector<Tensor<T>> encode_direct(const Tensor<float>& image, std::size_t timesteps, const ChannelStats& stats) {
  if (timesteps == 0) throw ConfigError("encode_direct: timesteps must be positive");
  return std::vector<Tensor<T>>(timesteps, standardize<T>(image, stats));
}

// --------------------------------------------------------------- synthetic

struct SyntheticSpec {
  std::size_t num_classes = 4;
  std::size_t num_frames = 4;  // K
  std::size_t rows = 8;        // tokens
  std::size_t cols = 8;        // features per token
  std::size_t timesteps = 8;
  std::vector<std::vector<std::size_t>> permutations;  // empty → canonical choice
  double noise_rate = 0.05;
  double frame_density = 0.5;
  // Start each sample at a uniformly random point of its class cycle, so
  // every step has the same frame distribution in every class.
  bool random_phase = true;
  std::size_t train_count = 4000;
  std::size_t test_count = 1000;
  std::uint64_t seed = 0;

  std::size_t hold() const { return std::max<std::size_t>(1, (timesteps + num_frames - 1) / num_frames); }
  std::size_t cycle() const { return num_frames * hold(); }
};

namespace detail {

inline bool is_rotation(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  for (std::size_t r = 0; r < a.size(); ++r) {
    bool same = true;
    for (std::size_t i = 0; i < a.size() && same; ++i) same = a[(i + r) % a.size()] == b[i];
    if (same) return true;
  }
  return false;
}

}  // namespace detail

/// First `classes` orderings of K frames that begin with frame 0, in
/// lexicographic order. No two are rotations of each other.
inline std::vector<std::vector<std::size_t>> canonical_permutations(std::size_t classes, std::size_t k) {
  std::vector<std::size_t> p(k);
  std::iota(p.begin(), p.end(), 0);
  std::vector<std::vector<std::size_t>> out;
  do {
    if (p[0] == 0) out.push_back(p);
  } while (out.size() < classes && std::next_permutation(p.begin(), p.end()));
  if (out.size() < classes)
    throw ConfigError("synthetic: " + std::to_string(k) + " frames admit only " + std::to_string(out.size()) +
                      " rotation-distinct orderings");
  return out;
}

inline void validate(const SyntheticSpec& spec, const std::vector<std::vector<std::size_t>>& perms) {
  if (spec.num_classes < 2) throw ConfigError("synthetic: need at least two classes");
  if (spec.num_frames == 0 || spec.rows == 0 || spec.cols == 0 || spec.timesteps == 0)
    throw ConfigError("synthetic: frame geometry and timesteps must be positive");
  if (!(spec.noise_rate >= 0 && spec.noise_rate <= 1)) throw ConfigError("synthetic: noise_rate outside [0,1]");
  if (perms.size() != spec.num_classes) throw ConfigError("synthetic: one permutation per class required");
  for (const auto& p : perms) {
    std::vector<std::size_t> s = p;
    std::sort(s.begin(), s.end());
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s.size() != spec.num_frames || s[i] != i)
        throw ConfigError("synthetic: every class must use each frame exactly once");
  }
  for (std::size_t a = 0; a < perms.size(); ++a)
    for (std::size_t b = a + 1; b < perms.size(); ++b) {
      if (perms[a] == perms[b]) throw ConfigError("synthetic: duplicate permutations");
      if (spec.random_phase && detail::is_rotation(perms[a], perms[b]))
        throw ConfigError("synthetic: permutations are rotations of each other, indistinguishable under random phase");
    }
}

/// Frame index shown at step t by a sample of class ordering `perm` at phase r.
inline std::size_t synthetic_frame(const SyntheticSpec& spec, const std::vector<std::size_t>& perm,
                                   std::size_t t, std::size_t phase) {
  return perm[((t + phase) % spec.cycle()) / spec.hold()];
}

inline Dataset gen_temporal_synthetic(const SyntheticSpec& spec) {
  const auto perms = spec.permutations.empty() ? canonical_permutations(spec.num_classes, spec.num_frames)
                                               : spec.permutations;
  validate(spec, perms);
  std::mt19937_64 frame_rng(spec.seed);
  std::bernoulli_distribution on(spec.frame_density);
  std::vector<Tensor<float>> frames;
  for (std::size_t k = 0; k < spec.num_frames; ++k) {
    Tensor<float> f({spec.rows, spec.cols});
    for (auto& v : f.values()) v = on(frame_rng) ? 1.0f : 0.0f;
    frames.push_back(std::move(f));
  }
  auto make = [&](std::size_t count, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::mt19937_64 rng(seq);
    std::bernoulli_distribution flip(spec.noise_rate);
    std::uniform_int_distribution<std::size_t> phase(0, spec.cycle() - 1);
    std::vector<Sample> out;
    out.reserve(count);
    const std::size_t plane = spec.rows * spec.cols;
    for (std::size_t i = 0; i < count; ++i) {
      const int label = static_cast<int>(i % spec.num_classes);
      const std::size_t r = spec.random_phase ? phase(rng) : 0;
      Sample s{Tensor<float>({spec.timesteps, spec.rows, spec.cols}), label};
      for (std::size_t t = 0; t < spec.timesteps; ++t) {
        const auto& f = frames[synthetic_frame(spec, perms[static_cast<std::size_t>(label)], t, r)];
        for (std::size_t k = 0; k < plane; ++k) {
          const float v = f[k];
          s.input[t * plane + k] = flip(rng) ? 1.0f - v : v;
        }
      }
      out.push_back(std::move(s));
    }
    return out;
  };
  Dataset ds;
  ds.kind = InputKind::sequence;
  ds.num_classes = spec.num_classes;
  ds.train = make(spec.train_count, 1);
  ds.test = make(spec.test_count, 2);
  return ds;
}

// ----------------------------------------------------------------- batches

/// Seeded shuffle of [0, n) for the given epoch, cut into batches; a final
/// batch smaller than two is dropped.
inline std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                        std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch_iter: batch_size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    const std::size_t end = std::min(n, i + batch_size);
    if (end - i < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

template <class T>
struct Batch {
  std::vector<Tensor<T>> steps;  // T tensors of [B·N × F]
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

/// Gathers samples into per-step model inputs.
template <class T>
Batch<T> make_batch(const Dataset& ds, const std::vector<Sample>& samples, std::span<const std::size_t> indices,
                    const ModelConfig& cfg) {
  Batch<T> b;
  const std::size_t bs = indices.size();
  const std::size_t n = cfg.tokens, f = cfg.in_features;
  b.steps.assign(cfg.timesteps, Tensor<T>({bs * n, f}));
  for (std::size_t i = 0; i < bs; ++i) {
    const Sample& s = samples.at(indices[i]);
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= cfg.num_classes)
      throw DataError("sample label " + std::to_string(s.label) + " outside model classes");
    b.labels.push_back(s.label);
    if (ds.kind == InputKind::image) {
      const Tensor<T> img = standardize<T>(s.input, ds.stats);
      Tensor<T> one({1, img.dim(0), img.dim(1), img.dim(2)}, std::vector<T>(img.values().begin(), img.values().end()));
      const Tensor<T> patches = patchify(one, cfg.patch_size);
      if (patches.rows() != n || patches.cols() != f)
        throw DimensionError("image geometry does not match model config");
      for (auto& step : b.steps) std::copy(patches.values().begin(), patches.values().end(), step.data() + i * n * f);
    } else {
      if (s.input.rank() != 3 || s.input.dim(0) < cfg.timesteps || s.input.dim(1) != n || s.input.dim(2) != f)
        throw DimensionError("sequence sample " + shape_str(s.input.shape()) + " does not match model config");
      for (std::size_t t = 0; t < cfg.timesteps; ++t)
        for (std::size_t k = 0; k < n * f; ++k) b.steps[t][i * n * f + k] = static_cast<T>(s.input[t * n * f + k]);
    }
  }
  return b;
}

}  // namespace dista
