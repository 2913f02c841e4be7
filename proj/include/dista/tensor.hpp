#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dista {

// Error taxonomy. Every failure class the CLI maps to a distinct exit code
// derives from one of these.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct CompatError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct DomainError : Error {
  using Error::Error;
};
struct DegenerateBatchError : ContractError {
  using ContractError::ContractError;
};

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensors hold f32 or f64");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. The element type fixes the dtype.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  static Tensor scalar(T value) { return Tensor({1}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  DType dtype() const noexcept { return dtype_of<T>(); }

  // 2-D views; a rank-1 tensor is treated as a single row.
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : size()); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <class T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](T v) { return std::isfinite(v); });
}

template <class T>
bool is_binary(const Tensor<T>& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](T v) { return v == T(0) || v == T(1); });
}

// Bitwise equality, so that -0 and +0 or differing NaN payloads are told apart.
template <class T>
bool bit_identical(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.values().begin(), a.values().end(), b.values().begin(),
                    [](T x, T y) { return std::memcmp(&x, &y, sizeof(T)) == 0; });
}

inline void require_matrix(const Shape& s, const char* what) {
  if (s.size() != 2)
    throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_str(s));
}

/// C += A × B for row-major A[M×K], B[K×P]. Loop order i-k-j with k
/// ascending; zero entries of A are skipped, which leaves the result
/// bit-identical because adding +0 to a non-negative-zero sum is exact.
template <class T>
void matmul_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                       std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * p;
    const T* ai = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = ai[kk];
      if (av == T(0)) continue;
      const T* bk = b + kk * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += av * bk[j];
    }
  }
}

/// out[K×P] = A[M×K]ᵀ × B[M×P], accumulated over rows of A in order.
template <class T>
void matmul_tn_accumulate(const T* a, const T* b, T* out, std::size_t m, std::size_t k,
                          std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = ai[kk];
      if (av == T(0)) continue;
      T* ok = out + kk * p;
      for (std::size_t j = 0; j < p; ++j) ok[j] += av * bi[j];
    }
  }
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix(a.shape(), "transpose");
  Tensor<T> t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a.shape(), "matmul lhs");
  require_matrix(b.shape(), "matmul rhs");
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  Tensor<T> c({a.rows(), b.cols()});
  matmul_accumulate(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

}  // namespace dista
