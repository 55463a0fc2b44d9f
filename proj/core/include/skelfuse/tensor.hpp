#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skelfuse/error.hpp"

namespace skelfuse {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major N-dimensional array. A rank-0 tensor (empty shape) holds one value.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : shape_{}, data_(1, T{0}) {}

  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_extents();
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_numel(shape_)) {
      throw_shape("tensor data length does not match shape", shape_, Shape{data_.size()});
    }
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), T{0}); }
  static BasicTensor ones(Shape shape) { return BasicTensor(std::move(shape), T{1}); }
  static BasicTensor scalar(T v) { return BasicTensor(Shape{}, std::vector<T>{v}); }

  static BasicTensor identity(std::size_t n) {
    BasicTensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T{1};
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  bool is_scalar() const noexcept { return data_.size() == 1; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  T item() const {
    if (data_.size() != 1) throw_usage("item() on a tensor with " + std::to_string(numel()) + " values");
    return data_[0];
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) throw_shape("reshape", shape_, shape);
    return BasicTensor(std::move(shape), data_);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw_usage("tensor extents must be positive, got " + shape_string(shape_));
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw_usage("index rank does not match tensor rank");
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[axis]) throw_usage("index out of range on axis " + std::to_string(axis));
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

/// Largest |a-b| over elements; shapes must match.
template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw_shape("max_abs_diff", a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

}  // namespace skelfuse
