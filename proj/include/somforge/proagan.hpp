#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "somforge/adam.hpp"
#include "somforge/autodiff.hpp"
#include "somforge/imaging.hpp"

namespace somforge::proagan {

enum class LossVariant { wgan_clip, logistic_ns };

std::string_view to_string(LossVariant v);
/// Throws ConfigError for unknown names.
LossVariant parse_loss(std::string_view name);

struct ArchConfig {
  std::size_t latent_dim = 64;
  std::size_t c0 = 16;
  std::size_t c_max = 128;
  /// Top level; images at level l are 2^(l+2) pixels square.
  std::size_t max_level = 3;
  /// Generator output is mid + half_range * tanh(.), mapping onto [lo, hi].
  double out_lo = -1.0;
  double out_hi = 1.0;
  bool minibatch_stddev = false;
  bool equalized_lr = false;
  double lrelu_slope = 0.2;
  DType dtype = DType::f32;

  std::size_t channels(std::size_t level) const;
  void validate() const;
};

std::size_t resolution(std::size_t level);
/// Level whose resolution is n; throws ShapeError when n is not 4 * 2^l.
std::size_t level_of(std::size_t n);

/// Generator and discriminator parameters, both built up to `level`.
struct Nets {
  ArchConfig arch;
  std::size_t level = 0;
  NamedTensors gen;
  NamedTensors disc;

  std::size_t gen_parameter_count() const;
  std::size_t disc_parameter_count() const;
};

/// He-initialized networks at level 0. Each level's parameters come from their
/// own sub-stream of `seed`, so growing step by step equals building directly.
Nets init_nets(const ArchConfig& arch, std::uint64_t seed);
/// Adds the generator top block and the discriminator bottom block for
/// `to_level`, which must be level + 1. Existing parameters are untouched.
void grow(Nets& nets, std::size_t to_level, std::uint64_t seed);

struct FadeState {
  std::size_t level = 0;
  double alpha = 1.0;
};

/// Binds named parameters to tape leaves, as variables or constants.
class Bound {
 public:
  Bound(ad::Tape& tape, const NamedTensors& params, bool trainable);

  ad::Var operator[](const std::string& name) const;
  ad::Tape& tape() const { return *tape_; }
  /// Gradients for every bound parameter.
  NamedTensors gradients(const ad::Gradients& g) const;

 private:
  ad::Tape* tape_;
  std::map<std::string, ad::Var> vars_;
};

/// z [B,k] -> images [B,1,r,r] at fs.level.
ad::Var gen_forward(const Bound& g, const ArchConfig& arch, std::size_t built_level, ad::Var z, const FadeState& fs);
/// x [B,1,r,r] at fs.level -> scores [B,1].
ad::Var disc_forward(const Bound& d, const ArchConfig& arch, std::size_t built_level, ad::Var x,
                     const FadeState& fs);

/// Upsample to full resolution, measure with fresh noise, reconstruct, and
/// average-pool back to `level`.
ad::Var synth_measurement_path(ad::Var f_hat, std::size_t level, std::size_t max_level,
                               const imaging::NoiseModel& noise, Rng& rng);

/// Full-resolution batch [N,1,n,n] average-pooled down to `level`.
Tensor downscale(const Tensor& images, std::size_t from_level, std::size_t to_level);

/// Reconstructions at every level 0..max_level, computed once.
class RealPyramid {
 public:
  RealPyramid(const Tensor& reconstructions, std::size_t max_level);
  const Tensor& at(std::size_t level) const;
  std::size_t count() const { return levels_.back().shape()[0]; }

 private:
  std::vector<Tensor> levels_;
};

ad::Var loss_discriminator(ad::Var real_scores, ad::Var fake_scores, LossVariant variant);
ad::Var loss_generator(ad::Var fake_scores, LossVariant variant);

/// Clamps every discriminator parameter elementwise to [-c, c].
void clip_weights(NamedTensors& params, double c);

/// Standard-normal latent batch [B,k].
Tensor latent_batch(std::size_t batch, std::size_t dim, DType dtype, Rng& rng);

}  // namespace somforge::proagan
