#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "somforge/error.hpp"

namespace somforge {

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

std::string_view to_string(DType dtype);

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Calls `fn(T{})` with T = float or double according to `dtype`.
template <class Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
  if (dtype == DType::f32) return fn(float{});
  return fn(double{});
}

/// Up to four extents, row-major. Rank 0 denotes a scalar.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::span<const std::size_t> dims);

  std::size_t rank() const noexcept { return rank_; }
  std::size_t operator[](std::size_t axis) const;
  std::size_t numel() const noexcept;
  std::span<const std::size_t> dims() const noexcept { return {dims_.data(), rank_}; }

  std::string to_string() const;

  friend bool operator==(const Shape& a, const Shape& b) noexcept {
    if (a.rank_ != b.rank_) return false;
    for (std::size_t i = 0; i < a.rank_; ++i)
      if (a.dims_[i] != b.dims_[i]) return false;
    return true;
  }

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

/// Dense row-major tensor of f32 or f64 scalars. Tensors are values: once
/// constructed their contents never change; every operation returns a new one.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<float> values);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(const Shape& shape, DType dtype);
  static Tensor filled(const Shape& shape, DType dtype, double value);
  static Tensor scalar(double value, DType dtype);

  DType dtype() const noexcept;
  const Shape& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return shape_.numel(); }

  /// Typed view; throws DTypeError when T does not match dtype().
  template <class T>
  std::span<const T> values() const {
    const auto* v = std::get_if<std::vector<T>>(&data_);
    if (v == nullptr) throw DTypeError(dtype_mismatch_message(dtype_of<T>()));
    return {v->data(), v->size()};
  }

  /// Element `i` widened to double.
  double at(std::size_t i) const;
  /// The single element of a one-element tensor.
  double item() const;

  Tensor to(DType dtype) const;
  Tensor reshaped(const Shape& shape) const;

  /// Same dtype, same shape and identical bit patterns.
  bool bit_equal(const Tensor& other) const noexcept;

 private:
  std::string dtype_mismatch_message(DType requested) const;

  Shape shape_;
  std::variant<std::vector<float>, std::vector<double>> data_;
};

/// Throws ShapeError naming `what` unless the shapes agree.
void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what);
/// Throws DTypeError naming `what` unless the dtypes agree.
void require_same_dtype(const Tensor& a, const Tensor& b, std::string_view what);

}  // namespace somforge
