#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cmr/error.hpp"

namespace cmr {

/// Extent of a [batch, channel, row, col] tensor.
struct Shape4 {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  [[nodiscard]] constexpr std::size_t count() const { return batch * channels * rows * cols; }
  [[nodiscard]] constexpr std::size_t plane() const { return rows * cols; }
  friend constexpr bool operator==(const Shape4&, const Shape4&) = default;
};

std::string to_string(const Shape4& s);

/// Dense NCHW tensor in C order. Value semantics; gradients live in separate
/// tensors of the same shape.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape4 shape, T fill = T{0}) : shape_(shape), values_(shape.count(), fill) {}

  [[nodiscard]] const Shape4& shape() const { return shape_; }
  [[nodiscard]] std::size_t batch() const { return shape_.batch; }
  [[nodiscard]] std::size_t channels() const { return shape_.channels; }
  [[nodiscard]] std::size_t rows() const { return shape_.rows; }
  [[nodiscard]] std::size_t cols() const { return shape_.cols; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] bool empty() const { return values_.empty(); }

  [[nodiscard]] T* data() { return values_.data(); }
  [[nodiscard]] const T* data() const { return values_.data(); }
  [[nodiscard]] std::span<T> values() { return values_; }
  [[nodiscard]] std::span<const T> values() const { return values_; }

  [[nodiscard]] std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.channels + c) * shape_.rows + y) * shape_.cols + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) { return values_[offset(n, c, y, x)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return values_[offset(n, c, y, x)];
  }

  /// Pointer to the start of plane (n, c).
  T* plane(std::size_t n, std::size_t c) { return values_.data() + offset(n, c, 0, 0); }
  const T* plane(std::size_t n, std::size_t c) const { return values_.data() + offset(n, c, 0, 0); }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  template <typename U>
  [[nodiscard]] BasicTensor<U> cast() const {
    BasicTensor<U> out(shape_);
    for (std::size_t i = 0; i < values_.size(); ++i) out.data()[i] = static_cast<U>(values_[i]);
    return out;
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape4 shape_{};
  std::vector<T> values_;
};

using Tensor = BasicTensor<float>;

/// Throws InputError naming `what` unless the shapes agree.
void require_same_shape(const Shape4& a, const Shape4& b, const char* what);

/// True when every value is finite.
bool all_finite(std::span<const float> values);

}  // namespace cmr
