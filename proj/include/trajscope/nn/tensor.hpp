#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "trajscope/errors.hpp"

namespace trajscope::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t volume(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major array. T is double for exact work and float for speed.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(volume(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != volume(shape_)) {
      throw ValidationError("tensor buffer of " + std::to_string(data_.size()) + " values does not fit shape " +
                            shape_string(shape_));
    }
  }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t dim(std::size_t i) const { return shape_.at(i); }
  [[nodiscard]] std::size_t rank() const { return shape_.size(); }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] T* data() { return data_.data(); }
  [[nodiscard]] const T* data() const { return data_.data(); }
  [[nodiscard]] std::vector<T>& values() { return data_; }
  [[nodiscard]] const std::vector<T>& values() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same buffer, new extents of equal volume.
  [[nodiscard]] Tensor reshaped(Shape s) const& {
    if (volume(s) != size()) {
      throw ValidationError("cannot reshape " + shape_string(shape_) + " to " + shape_string(s));
    }
    return Tensor(std::move(s), data_);
  }
  [[nodiscard]] Tensor reshaped(Shape s) && {
    if (volume(s) != size()) {
      throw ValidationError("cannot reshape " + shape_string(shape_) + " to " + shape_string(s));
    }
    return Tensor(std::move(s), std::move(data_));
  }

  [[nodiscard]] bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <class U>
  [[nodiscard]] Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// A trainable tensor and its accumulated gradient.
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

}  // namespace trajscope::nn
