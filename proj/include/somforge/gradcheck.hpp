#pragma once

// Central finite-difference oracle for primitive vector-Jacobian products.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "somforge/autodiff.hpp"

namespace somforge::ad {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = u(rng);
  return Tensor(shape, std::move(v));
}

inline Tensor with_value(const Tensor& t, std::size_t i, double value) {
  auto v = t.values<double>();
  std::vector<double> out(v.begin(), v.end());
  out[i] = value;
  return Tensor(t.shape(), std::move(out));
}

inline double projected(Primitive op, const std::vector<Tensor>& inputs, const Attrs& attrs, const Tensor& weights) {
  std::vector<const Tensor*> ptrs;
  for (const auto& t : inputs) ptrs.push_back(&t);
  Tensor y = forward_primitive(op, ptrs, attrs);
  double s = 0.0;
  auto yv = y.values<double>();
  auto wv = weights.values<double>();
  for (std::size_t i = 0; i < yv.size(); ++i) s += yv[i] * wv[i];
  return s;
}

/// Max over all inputs/elements of |analytic - fd| / max(1, |fd|), where the
/// scalar objective is sum(w * op(inputs)) for a random projection w.
inline double gradcheck(Primitive op, std::vector<Tensor> inputs, const Attrs& attrs, std::mt19937_64& rng,
                        double h = 1e-5) {
  std::vector<const Tensor*> ptrs;
  for (const auto& t : inputs) ptrs.push_back(&t);
  Tensor y = forward_primitive(op, ptrs, attrs);
  Tensor w = random_tensor(y.shape(), rng);
  bool needs[2] = {true, true};
  auto grads = backward_primitive(op, ptrs, y, w, attrs, std::span<const bool>(needs, inputs.size()));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor original = inputs[k];
    for (std::size_t i = 0; i < original.numel(); ++i) {
      const double x0 = original.at(i);
      inputs[k] = with_value(original, i, x0 + h);
      const double fp = projected(op, inputs, attrs, w);
      inputs[k] = with_value(original, i, x0 - h);
      const double fm = projected(op, inputs, attrs, w);
      inputs[k] = original;
      const double fd = (fp - fm) / (2 * h);
      const double an = grads[k]->at(i);
      worst = std::max(worst, std::abs(an - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace somforge::ad
