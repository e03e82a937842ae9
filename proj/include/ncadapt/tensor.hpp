#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ncadapt/rng.hpp"

namespace ncadapt {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array. Grids are laid out channel-first: [C, D?, H, W].
/// The shape is fixed at construction; element values may be updated in place
/// by owners such as the optimizer.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  static BasicTensor zeros(const Shape& shape) { return full(shape, T(0)); }
  static BasicTensor full(const Shape& shape, T value);
  static BasicTensor from_values(const Shape& shape, std::vector<T> values);
  static BasicTensor uniform(const Shape& shape, double lo, double hi, Rng& rng);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const T* ptr() const { return data_.data(); }
  T* ptr() { return data_.data(); }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }

  bool all_finite() const;

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>::from_values(shape_, std::move(out));
  }

  // Same data, new shape with equal element count.
  BasicTensor reshaped(const Shape& shape) const;

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {}

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// Byte-level equality (distinguishes -0.0 from 0.0 and NaN payloads).
template <class T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Bernoulli(p) draws over a spatial shape, one per cell, values in {0, 1}.
template <class T>
BasicTensor<T> bernoulli_mask(const Shape& spatial, double p, Rng& rng);

}  // namespace ncadapt
