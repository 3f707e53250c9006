#include "somforge/adam.hpp"

#include <cmath>

namespace somforge {

Tensor adam_update(const Tensor& param, const Tensor& grad, AdamMoments& moments, const AdamConfig& config,
                   const std::string& name) {
  require_same_shape(param, grad, "adam_step(" + name + ")");
  require_same_dtype(param, grad, "adam_step(" + name + ")");
  if (moments.t == 0 && (!(moments.m.shape() == param.shape()) || moments.m.dtype() != param.dtype())) {
    moments.m = Tensor::zeros(param.shape(), param.dtype());
    moments.v = Tensor::zeros(param.shape(), param.dtype());
  }
  require_same_shape(param, moments.m, "adam_step(" + name + ") first moment");
  require_same_shape(param, moments.v, "adam_step(" + name + ") second moment");

  return dispatch(param.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto g = grad.values<T>();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i]))
        throw NumericError("adam_step: non-finite gradient for parameter '" + name + "' at index " +
                           std::to_string(i));
    auto p = param.values<T>();
    auto m = moments.m.values<T>();
    auto v = moments.v.values<T>();
    const std::int64_t t = moments.t + 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
    const T b1 = static_cast<T>(config.beta1), b2 = static_cast<T>(config.beta2);
    const T step = static_cast<T>(config.lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(config.epsilon);
    std::vector<T> p2(p.size()), m2(p.size()), v2(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      m2[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v2[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      p2[i] = p[i] - step * m2[i] / (std::sqrt(v2[i] * inv_bc2) + eps);
    }
    moments.m = Tensor(param.shape(), std::move(m2));
    moments.v = Tensor(param.shape(), std::move(v2));
    moments.t = t;
    return Tensor(param.shape(), std::move(p2));
  });
}

void adam_step(NamedTensors& params, const NamedTensors& grads, AdamState& state) {
  for (const auto& [name, grad] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw Error("adam_step: gradient for unknown parameter '" + name + "'");
    it->second = adam_update(it->second, grad, state.moments[name], state.config, name);
  }
}

}  // namespace somforge
