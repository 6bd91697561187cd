#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "faultseg/errors.hpp"

namespace faultseg {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         [](std::int64_t a, std::int64_t b) { return a * b; });
}

std::string shape_str(const Shape& shape);

/// Dense row-major tensor. Feature maps are channels-first (C, D, H, W) with W
/// fastest-varying; kernels are (C_out, C_in, kD, kH, kW).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
      throw ShapeError("tensor buffer holds " + std::to_string(data_.size()) +
                       " elements but shape " + shape_str(shape_) + " needs " +
                       std::to_string(shape_numel(shape_)));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Element of a rank-4 (C, D, H, W) tensor.
  T& at(std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((c * shape_[1] + d) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at(std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((c * shape_[1] + d) * shape_[2] + h) * shape_[3] + w)];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// True when every element is finite.
template <typename T>
bool all_finite(const Tensor<T>& t);

}  // namespace faultseg
