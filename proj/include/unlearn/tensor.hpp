#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unlearn/errors.hpp"

namespace unlearn {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major n-dimensional array.
///
/// Storage is 32-bit (`Tensor`) for training; `Tensor64` carries the same
/// operations in double precision so gradient checks can be run with
/// 64-bit accumulation end to end.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_to_string(shape_));
    }
  }

  BasicTensor(Shape shape, std::initializer_list<T> data)
      : BasicTensor(std::move(shape), std::vector<T>(data)) {}

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// 2-D element access; the tensor must have rank 2.
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  void fill(T v) {
    for (auto& x : data_) x = v;
  }

  /// Same data viewed with a different shape of equal element count.
  BasicTensor reshaped(Shape shape) const {
    if (checked_numel(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " +
                           shape_to_string(shape));
    }
    BasicTensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  void reshape_inplace(Shape shape) {
    if (checked_numel(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " +
                           shape_to_string(shape));
    }
    shape_ = std::move(shape);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const noexcept {
    for (const auto& x : data_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  static std::size_t checked_numel(const Shape& shape) {
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
    return shape_numel(shape);
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Bitwise equality of shapes and element representations (distinguishes
/// -0.0 from +0.0 and compares NaN payloads).
template <typename T>
bool bit_identical(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Throws NumericError naming `what` when any element is NaN or infinite.
template <typename T>
void require_finite(const BasicTensor<T>& t, const std::string& what);

}  // namespace unlearn
