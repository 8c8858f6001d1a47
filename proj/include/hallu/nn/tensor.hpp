#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hallu::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

enum class Mode { kTrain, kEval };

/// Dense row-major tensor. A plain value type: copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_size(shape_) != values_.size()) {
      throw std::invalid_argument("tensor: shape " + shape_string(shape_) + " does not match " +
                                  std::to_string(values_.size()) + " values");
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::vector<T>& storage() { return values_; }
  const std::vector<T>& storage() const { return values_; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  T& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    return values_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  const T& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return values_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  /// Contiguous slice along the leading axis.
  std::span<T> row(std::size_t i) {
    const std::size_t stride = values_.size() / shape_.at(0);
    return std::span<T>(values_).subspan(i * stride, stride);
  }
  std::span<const T> row(std::size_t i) const {
    const std::size_t stride = values_.size() / shape_.at(0);
    return std::span<const T>(values_).subspan(i * stride, stride);
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), values_); }
  Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(values_)); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
  }

  bool all_finite() const {
    for (const T v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<T> values_;
};

/// Trips in debug builds when a layer produces NaN/Inf.
template <typename T>
inline void debug_check_finite([[maybe_unused]] const Tensor<T>& t,
                               [[maybe_unused]] const char* where) {
#ifndef NDEBUG
  if (!t.all_finite()) {
    assert(false && "non-finite tensor value");
  }
#endif
}

/// Concatenate tensors along the leading axis; trailing extents must agree.
template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>* const> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Shape shape = parts.front()->shape();
  std::size_t rows = 0;
  std::vector<T> values;
  for (const Tensor<T>* p : parts) {
    if (p->rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p->shape().begin() + 1)) {
      throw std::invalid_argument("concat_rows: trailing shape mismatch " + shape_string(p->shape()) +
                                  " vs " + shape_string(shape));
    }
    rows += p->dim(0);
    values.insert(values.end(), p->values().begin(), p->values().end());
  }
  shape[0] = rows;
  return Tensor<T>(std::move(shape), std::move(values));
}

/// A trainable tensor plus its gradient accumulator.
template <typename T>
struct Parameter {
  std::string id;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string name, Tensor<T> v)
      : id(std::move(name)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T{0}); }
};

}  // namespace hallu::nn
