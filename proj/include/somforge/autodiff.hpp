#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "somforge/tensor.hpp"

namespace somforge::ad {

enum class Primitive : std::uint8_t {
  conv2d,               // x[B,Ci,H,W] * w[Co,Ci,K,K], stride 1, zero "same" padding, K odd
  dense,                // x[B,In] * w[Out,In]^T -> [B,Out]
  leaky_relu,           // attrs.scalar = negative slope
  upsample_nearest_2x,  // [B,C,H,W] -> [B,C,2H,2W]
  avgpool_2x,           // [B,C,H,W] -> [B,C,H/2,W/2]
  add,
  scale_by_constant,  // attrs.scalar = factor
  pixel_norm,         // x / sqrt(mean over axis 1 of x^2 + 1e-8)
  reduce_mean,        // -> rank-0 scalar
  tanh,
  bias_add,          // x[B,C,...] + b[C]
  softplus,          // log(1 + exp(x))
  reshape,           // attrs.shape
  minibatch_stddev,  // [B,C,H,W] -> [B,C+1,H,W], appended channel = mean batch stddev
  linear_map,        // attrs.map
};

std::string_view name(Primitive op);

/// A fixed linear operator that can sit on the tape. Backward applies the
/// adjoint, so `adjoint` must be the exact transpose of `apply` under the
/// real inner product of the flattened tensors.
class LinearMap {
 public:
  virtual ~LinearMap() = default;
  virtual std::string name() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual Tensor apply(const Tensor& x) const = 0;
  virtual Tensor adjoint(const Tensor& y) const = 0;
};

struct Attrs {
  double scalar = 0.0;
  Shape shape;
  std::shared_ptr<const LinearMap> map;
};

inline constexpr double kPixelNormEpsilon = 1e-8;
inline constexpr double kStddevEpsilon = 1e-8;

/// Evaluates one primitive on concrete tensors.
Tensor forward_primitive(Primitive op, std::span<const Tensor* const> inputs, const Attrs& attrs);

/// Vector-Jacobian product of one primitive. Entry i is empty when
/// `needs[i]` is false.
std::vector<std::optional<Tensor>> backward_primitive(Primitive op, std::span<const Tensor* const> inputs,
                                                      const Tensor& output, const Tensor& grad_output,
                                                      const Attrs& attrs, std::span<const bool> needs);

using NodeId = std::size_t;
class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  Shape shape() const { return value().shape(); }
};

class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<std::optional<Tensor>> grads, std::vector<Shape> shapes, DType dtype)
      : grads_(std::move(grads)), shapes_(std::move(shapes)), dtype_(dtype) {}

  /// Gradient of the loss w.r.t. `v`; zeros when `v` is not on a path to it.
  Tensor of(Var v) const;
  bool has(Var v) const { return v.id < grads_.size() && grads_[v.id].has_value(); }

 private:
  std::vector<std::optional<Tensor>> grads_;
  std::vector<Shape> shapes_;
  DType dtype_ = DType::f32;
};

/// Records primitive applications in evaluation order; `backward` replays
/// them in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is wanted.
  Var variable(Tensor value);
  /// Leaf treated as a constant; no gradient flows into it.
  Var constant(Tensor value);

  Var apply(Primitive op, std::initializer_list<Var> inputs, Attrs attrs = {});

  const Tensor& value(NodeId id) const { return entries_.at(id).value; }
  bool requires_grad(NodeId id) const { return entries_.at(id).requires_grad; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Reverse-mode sweep from a one-element `loss`.
  Gradients backward(Var loss) const;

 private:
  struct Entry {
    std::optional<Primitive> op;  // empty for leaves
    std::vector<NodeId> inputs;
    Attrs attrs;
    Tensor value;
    bool requires_grad = false;
  };
  std::vector<Entry> entries_;
};

Var conv2d(Var x, Var w);
Var dense(Var x, Var w);
Var leaky_relu(Var x, double slope);
Var upsample_nearest_2x(Var x);
Var avgpool_2x(Var x);
Var add(Var a, Var b);
Var scale(Var x, double factor);
Var pixel_norm(Var x);
Var reduce_mean(Var x);
Var tanh(Var x);
Var bias_add(Var x, Var b);
Var softplus(Var x);
Var reshape(Var x, const Shape& shape);
Var minibatch_stddev(Var x);
Var linear_map(Var x, std::shared_ptr<const LinearMap> map);

/// alpha * a + (1 - alpha) * b
Var lerp(Var a, Var b, double alpha);

}  // namespace somforge::ad
