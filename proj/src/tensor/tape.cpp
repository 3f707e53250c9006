#include <string>

#include "somforge/autodiff.hpp"

namespace somforge::ad {
namespace {

Tensor sum_tensors(const Tensor& a, const Tensor& b) {
  return dispatch(a.dtype(), [&](auto t) {
    using T = decltype(t);
    auto x = a.values<T>();
    auto y = b.values<T>();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return Tensor(a.shape(), std::move(out));
  });
}

}  // namespace

const Tensor& Var::value() const {
  if (tape == nullptr) throw Error("Var is not attached to a tape");
  return tape->value(id);
}

Tensor Gradients::of(Var v) const {
  if (has(v)) return *grads_[v.id];
  if (v.id >= shapes_.size()) throw Error("node " + std::to_string(v.id) + " is not on this tape");
  return Tensor::zeros(shapes_[v.id], dtype_);
}

Var Tape::variable(Tensor value) {
  entries_.push_back(Entry{std::nullopt, {}, {}, std::move(value), true});
  return Var{this, entries_.size() - 1};
}

Var Tape::constant(Tensor value) {
  entries_.push_back(Entry{std::nullopt, {}, {}, std::move(value), false});
  return Var{this, entries_.size() - 1};
}

Var Tape::apply(Primitive op, std::initializer_list<Var> inputs, Attrs attrs) {
  std::vector<NodeId> ids;
  std::vector<const Tensor*> values;
  bool needs_grad = false;
  for (const Var& v : inputs) {
    if (v.tape != this) throw Error(std::string(name(op)) + ": input belongs to a different tape");
    ids.push_back(v.id);
    values.push_back(&entries_[v.id].value);
    needs_grad = needs_grad || entries_[v.id].requires_grad;
  }
  Tensor out = forward_primitive(op, values, attrs);
  entries_.push_back(Entry{op, std::move(ids), std::move(attrs), std::move(out), needs_grad});
  return Var{this, entries_.size() - 1};
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape != this) throw Error("backward: loss belongs to a different tape");
  const Tensor& lv = value(loss.id);
  if (lv.numel() != 1) throw ShapeError("backward: loss must be a scalar, got shape " + lv.shape().to_string());

  std::vector<std::optional<Tensor>> grads(entries_.size());
  std::vector<Shape> shapes(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) shapes[i] = entries_[i].value.shape();
  grads[loss.id] = Tensor::filled(lv.shape(), lv.dtype(), 1.0);

  for (std::size_t n = loss.id + 1; n-- > 0;) {
    const Entry& e = entries_[n];
    if (!e.op || !e.requires_grad || !grads[n]) continue;
    std::vector<const Tensor*> inputs;
    std::vector<char> needs_storage;
    for (NodeId id : e.inputs) {
      inputs.push_back(&entries_[id].value);
      needs_storage.push_back(entries_[id].requires_grad ? 1 : 0);
    }
    bool needs[2] = {false, false};
    for (std::size_t i = 0; i < needs_storage.size(); ++i) needs[i] = needs_storage[i] != 0;
    auto input_grads = backward_primitive(*e.op, inputs, e.value, *grads[n], e.attrs,
                                          std::span<const bool>(needs, needs_storage.size()));
    for (std::size_t i = 0; i < e.inputs.size(); ++i) {
      if (!input_grads[i]) continue;
      auto& slot = grads[e.inputs[i]];
      slot = slot ? sum_tensors(*slot, *input_grads[i]) : std::move(*input_grads[i]);
    }
  }
  const DType dtype = lv.dtype();
  return Gradients(std::move(grads), std::move(shapes), dtype);
}

Var conv2d(Var x, Var w) { return x.tape->apply(Primitive::conv2d, {x, w}); }
Var dense(Var x, Var w) { return x.tape->apply(Primitive::dense, {x, w}); }
Var leaky_relu(Var x, double slope) { return x.tape->apply(Primitive::leaky_relu, {x}, Attrs{slope, {}, nullptr}); }
Var upsample_nearest_2x(Var x) { return x.tape->apply(Primitive::upsample_nearest_2x, {x}); }
Var avgpool_2x(Var x) { return x.tape->apply(Primitive::avgpool_2x, {x}); }
Var add(Var a, Var b) { return a.tape->apply(Primitive::add, {a, b}); }
Var scale(Var x, double factor) {
  return x.tape->apply(Primitive::scale_by_constant, {x}, Attrs{factor, {}, nullptr});
}
Var pixel_norm(Var x) { return x.tape->apply(Primitive::pixel_norm, {x}); }
Var reduce_mean(Var x) { return x.tape->apply(Primitive::reduce_mean, {x}); }
Var tanh(Var x) { return x.tape->apply(Primitive::tanh, {x}); }
Var bias_add(Var x, Var b) { return x.tape->apply(Primitive::bias_add, {x, b}); }
Var softplus(Var x) { return x.tape->apply(Primitive::softplus, {x}); }
Var reshape(Var x, const Shape& shape) { return x.tape->apply(Primitive::reshape, {x}, Attrs{0.0, shape, nullptr}); }
Var minibatch_stddev(Var x) { return x.tape->apply(Primitive::minibatch_stddev, {x}); }
Var linear_map(Var x, std::shared_ptr<const LinearMap> map) {
  return x.tape->apply(Primitive::linear_map, {x}, Attrs{0.0, {}, std::move(map)});
}

Var lerp(Var a, Var b, double alpha) { return add(scale(a, alpha), scale(b, 1.0 - alpha)); }

}  // namespace somforge::ad
