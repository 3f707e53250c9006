#include "somforge/tensor.hpp"

#include <cstring>
#include <sstream>

namespace somforge {

std::string_view to_string(DType dtype) {
  switch (dtype) {
    case DType::f32:
      return "f32";
    case DType::f64:
      return "f64";
  }
  return "?";
}

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::span<const std::size_t>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const std::size_t> dims) {
  if (dims.size() > kMaxRank)
    throw ShapeError("tensor rank " + std::to_string(dims.size()) + " exceeds the maximum of 4");
  rank_ = dims.size();
  for (std::size_t i = 0; i < rank_; ++i) dims_[i] = dims[i];
}

std::size_t Shape::operator[](std::size_t axis) const {
  if (axis >= rank_) throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string());
  return dims_[axis];
}

std::size_t Shape::numel() const noexcept {
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
  return n;
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
  os << ']';
  return os.str();
}

Tensor::Tensor() : data_(std::vector<float>(1, 0.0f)) {}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(shape), data_(std::move(values)) {
  if (std::get<0>(data_).size() != shape_.numel())
    throw ShapeError("tensor of shape " + shape_.to_string() + " needs " + std::to_string(shape_.numel()) +
                     " values, got " + std::to_string(std::get<0>(data_).size()));
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
  if (std::get<1>(data_).size() != shape_.numel())
    throw ShapeError("tensor of shape " + shape_.to_string() + " needs " + std::to_string(shape_.numel()) +
                     " values, got " + std::to_string(std::get<1>(data_).size()));
}

Tensor Tensor::zeros(const Shape& shape, DType dtype) { return filled(shape, dtype, 0.0); }

Tensor Tensor::filled(const Shape& shape, DType dtype, double value) {
  return dispatch(dtype, [&](auto t) {
    using T = decltype(t);
    return Tensor(shape, std::vector<T>(shape.numel(), static_cast<T>(value)));
  });
}

Tensor Tensor::scalar(double value, DType dtype) { return filled(Shape{}, dtype, value); }

DType Tensor::dtype() const noexcept { return data_.index() == 0 ? DType::f32 : DType::f64; }

double Tensor::at(std::size_t i) const {
  if (i >= numel()) throw ShapeError("index " + std::to_string(i) + " out of range for shape " + shape_.to_string());
  return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, data_);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_.to_string());
  return at(0);
}

Tensor Tensor::to(DType target) const {
  return dispatch(target, [&](auto t) {
    using T = decltype(t);
    std::vector<T> out(numel());
    std::visit(
        [&](const auto& v) {
          for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(v[i]);
        },
        data_);
    return Tensor(shape_, std::move(out));
  });
}

Tensor Tensor::reshaped(const Shape& shape) const {
  if (shape.numel() != numel())
    throw ShapeError("reshape from " + shape_.to_string() + " to " + shape.to_string() + " changes element count");
  Tensor out = *this;
  out.shape_ = shape;
  return out;
}

bool Tensor::bit_equal(const Tensor& other) const noexcept {
  if (dtype() != other.dtype() || !(shape_ == other.shape_)) return false;
  return std::visit(
      [&](const auto& v) {
        using V = std::decay_t<decltype(v)>;
        const auto& w = std::get<V>(other.data_);
        return std::memcmp(v.data(), w.data(), v.size() * sizeof(typename V::value_type)) == 0;
      },
      data_);
}

std::string Tensor::dtype_mismatch_message(DType requested) const {
  return "tensor holds " + std::string(to_string(dtype())) + " values, requested " + std::string(to_string(requested));
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().to_string() + " vs " + b.shape().to_string());
}

void require_same_dtype(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.dtype() != b.dtype())
    throw DTypeError(std::string(what) + ": dtype mismatch " + std::string(to_string(a.dtype())) + " vs " +
                     std::string(to_string(b.dtype())));
}

}  // namespace somforge
