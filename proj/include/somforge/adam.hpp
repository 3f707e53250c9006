#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "somforge/tensor.hpp"

namespace somforge {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double epsilon = 1e-8;
};

/// Moments for one parameter tensor.
struct AdamMoments {
  Tensor m;
  Tensor v;
  std::int64_t t = 0;
};

using NamedTensors = std::map<std::string, Tensor>;

/// Optimizer state keyed by parameter name. Moments are created lazily on a
/// parameter's first update.
struct AdamState {
  AdamConfig config;
  std::map<std::string, AdamMoments> moments;
};

/// One Adam update with bias correction for every parameter that has an entry
/// in `grads`; parameters without a gradient are left untouched. Throws
/// NumericError naming the parameter when a gradient is not finite.
void adam_step(NamedTensors& params, const NamedTensors& grads, AdamState& state);

/// Single-tensor form of the update.
Tensor adam_update(const Tensor& param, const Tensor& grad, AdamMoments& moments, const AdamConfig& config,
                   const std::string& name = "param");

}  // namespace somforge
