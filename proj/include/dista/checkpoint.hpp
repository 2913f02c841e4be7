#pragma once

// Binary checkpoint container, little-endian throughout:
//
//   "DSTA"  u32 version
//   u32 config_len, config text
//   u64 epoch  u64 optimizer_step
//   u32 rng_len, rng text
//   u32 record_count, then per record:
//     u32 name_len, name, u8 dtype, u32 rank, u64 dims[rank], payload
//
// Record names: param/<name>, bn_mean/<layer>, bn_var/<layer>,
// adam_m/<name>, adam_v/<name>.

#include <bit>
#include <filesystem>
#include <fstream>

#include "dista/config.hpp"
#include "dista/model.hpp"
#include "dista/optim.hpp"

namespace dista {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'D', 'S', 'T', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> payload;

  bool operator==(const TensorRecord&) const = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config;
  std::uint64_t epoch = 0;
  std::uint64_t optim_step = 0;
  std::string rng;
  std::vector<TensorRecord> records;

  bool operator==(const Checkpoint&) const = default;

  const TensorRecord* find(std::string_view name) const {
    for (const auto& r : records)
      if (r.name == name) return &r;
    return nullptr;
  }
};

template <class T>
TensorRecord to_record(std::string name, const Tensor<T>& t) {
  TensorRecord r{std::move(name), dtype_of<T>(), t.shape(), std::vector<std::uint8_t>(t.size() * sizeof(T))};
  if (t.size()) std::memcpy(r.payload.data(), t.data(), r.payload.size());
  return r;
}

template <class T>
Tensor<T> from_record(const TensorRecord& r) {
  if (r.dtype != dtype_of<T>()) throw CompatError("record " + r.name + ": dtype mismatch");
  Tensor<T> t(r.shape);
  if (r.payload.size() != t.size() * sizeof(T)) throw FormatError("record " + r.name + ": payload size mismatch");
  if (t.size()) std::memcpy(t.data(), r.payload.data(), r.payload.size());
  return t;
}

namespace detail {

class Writer {
 public:
  template <class U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void put_bytes(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
  void put_string32(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  template <class U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, b_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::vector<std::uint8_t> get_bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(b_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }
  std::string get_string32() {
    const auto n = get<std::uint32_t>();
    const auto bytes = get_bytes(n);
    return std::string(bytes.begin(), bytes.end());
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
  }
  throw FormatError("unknown dtype code " + std::to_string(static_cast<int>(d)));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  detail::Writer w;
  w.put_bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(kCheckpointMagic), 4));
  w.put<std::uint32_t>(ck.version);
  w.put_string32(ck.config);
  w.put<std::uint64_t>(ck.epoch);
  w.put<std::uint64_t>(ck.optim_step);
  w.put_string32(ck.rng);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.records.size()));
  for (const auto& r : ck.records) {
    w.put_string32(r.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.dtype));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) w.put<std::uint64_t>(d);
    w.put_bytes(r.payload);
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::Reader r(bytes);
  const auto magic = r.get_bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic)) throw FormatError("checkpoint: bad magic bytes");
  Checkpoint ck;
  ck.version = r.get<std::uint32_t>();
  if (ck.version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(ck.version));
  ck.config = r.get_string32();
  ck.epoch = r.get<std::uint64_t>();
  ck.optim_step = r.get<std::uint64_t>();
  ck.rng = r.get_string32();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    TensorRecord rec;
    rec.name = r.get_string32();
    rec.dtype = static_cast<DType>(r.get<std::uint8_t>());
    const std::size_t elem = detail::dtype_size(rec.dtype);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError("checkpoint: record " + rec.name + " has rank " + std::to_string(rank));
    std::size_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      rec.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
      count *= rec.shape.back();
    }
    rec.payload = r.get_bytes(count * elem);
    ck.records.push_back(std::move(rec));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes after last record");
  return ck;
}

inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

/// Snapshot of model, batch-norm statistics and optimizer moments.
template <class T>
Checkpoint make_checkpoint(Model<T>& model, const OptimState<T>& optim, const std::string& config_text,
                           std::uint64_t epoch, const std::string& rng) {
  Checkpoint ck;
  ck.config = config_text;
  ck.epoch = epoch;
  ck.optim_step = optim.step;
  ck.rng = rng;
  for (const auto& p : model.params()) ck.records.push_back(to_record("param/" + p.name, p.value));
  for (const auto* bn : model.bn_layers()) {
    ck.records.push_back(to_record("bn_mean/" + bn->name, bn->stats.running_mean));
    ck.records.push_back(to_record("bn_var/" + bn->name, bn->stats.running_var));
  }
  const bool has_moments = optim.m.size() == model.params().size();
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const auto& p = model.params()[i];
    ck.records.push_back(to_record("adam_m/" + p.name, has_moments ? optim.m[i] : Tensor<T>(p.value.shape())));
    ck.records.push_back(to_record("adam_v/" + p.name, has_moments ? optim.v[i] : Tensor<T>(p.value.shape())));
  }
  return ck;
}

/// Names and shapes the model expects, in file order.
template <class T>
std::vector<std::pair<std::string, Shape>> expected_records(Model<T>& model) {
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& p : model.params()) out.emplace_back("param/" + p.name, p.value.shape());
  for (const auto* bn : model.bn_layers()) {
    out.emplace_back("bn_mean/" + bn->name, bn->stats.running_mean.shape());
    out.emplace_back("bn_var/" + bn->name, bn->stats.running_var.shape());
  }
  for (const auto& p : model.params()) {
    out.emplace_back("adam_m/" + p.name, p.value.shape());
    out.emplace_back("adam_v/" + p.name, p.value.shape());
  }
  return out;
}

/// Copies checkpoint state into model and optimizer. Every record is
/// checked before anything is written, so a mismatch leaves both untouched.
template <class T>
void restore_checkpoint(const Checkpoint& ck, Model<T>& model, OptimState<T>& optim) {
  const auto expected = expected_records(model);
  if (ck.records.size() != expected.size())
    throw CompatError("checkpoint holds " + std::to_string(ck.records.size()) + " tensors, model expects " +
                      std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& r = ck.records[i];
    if (r.name != expected[i].first)
      throw CompatError("checkpoint record " + std::to_string(i) + " is " + r.name + ", expected " + expected[i].first);
    if (r.shape != expected[i].second)
      throw CompatError("checkpoint record " + r.name + " has shape " + shape_str(r.shape) + ", model expects " +
                        shape_str(expected[i].second));
    if (r.dtype != dtype_of<T>()) throw CompatError("checkpoint record " + r.name + " has a different dtype");
  }
  std::size_t k = 0;
  for (auto& p : model.params()) p.value = from_record<T>(ck.records[k++]);
  for (auto* bn : model.bn_layers()) {
    bn->stats.running_mean = from_record<T>(ck.records[k++]);
    bn->stats.running_var = from_record<T>(ck.records[k++]);
  }
  optim.m.clear();
  optim.v.clear();
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    optim.m.push_back(from_record<T>(ck.records[k++]));
    optim.v.push_back(from_record<T>(ck.records[k++]));
  }
  optim.step = ck.optim_step;
}

}  // namespace dista
