#include "somforge/proagan.hpp"

#include <cmath>

namespace somforge::proagan {
namespace {

std::string key(char side, std::size_t level, const char* layer, const char* what) {
  return std::string(1, side) + "/l" + std::to_string(level) + "/" + layer + "/" + what;
}

struct ParamSpec {
  std::string name;
  Shape shape;
  bool weight;
};

std::size_t fan_in(const Shape& s) {
  std::size_t f = 1;
  for (std::size_t i = 1; i < s.rank(); ++i) f *= s[i];
  return f;
}

std::vector<ParamSpec> gen_specs(const ArchConfig& a, std::size_t l) {
  const std::size_t c = a.channels(l);
  std::vector<ParamSpec> s;
  if (l == 0) {
    s.push_back({key('g', 0, "dense", "w"), Shape{16 * c, a.latent_dim}, true});
    s.push_back({key('g', 0, "dense", "b"), Shape{16 * c}, false});
    s.push_back({key('g', 0, "conv", "w"), Shape{c, c, 3, 3}, true});
    s.push_back({key('g', 0, "conv", "b"), Shape{c}, false});
  } else {
    const std::size_t cp = a.channels(l - 1);
    s.push_back({key('g', l, "conv0", "w"), Shape{c, cp, 3, 3}, true});
    s.push_back({key('g', l, "conv0", "b"), Shape{c}, false});
    s.push_back({key('g', l, "conv1", "w"), Shape{c, c, 3, 3}, true});
    s.push_back({key('g', l, "conv1", "b"), Shape{c}, false});
  }
  s.push_back({key('g', l, "torgb", "w"), Shape{1, c, 1, 1}, true});
  s.push_back({key('g', l, "torgb", "b"), Shape{1}, false});
  return s;
}

std::vector<ParamSpec> disc_specs(const ArchConfig& a, std::size_t l) {
  const std::size_t c = a.channels(l);
  std::vector<ParamSpec> s;
  s.push_back({key('d', l, "fromrgb", "w"), Shape{c, 1, 1, 1}, true});
  s.push_back({key('d', l, "fromrgb", "b"), Shape{c}, false});
  if (l == 0) {
    const std::size_t extra = a.minibatch_stddev ? 1 : 0;
    s.push_back({key('d', 0, "conv", "w"), Shape{c, c + extra, 3, 3}, true});
    s.push_back({key('d', 0, "conv", "b"), Shape{c}, false});
    s.push_back({key('d', 0, "dense0", "w"), Shape{c, 16 * c}, true});
    s.push_back({key('d', 0, "dense0", "b"), Shape{c}, false});
    s.push_back({key('d', 0, "dense1", "w"), Shape{1, c}, true});
    s.push_back({key('d', 0, "dense1", "b"), Shape{1}, false});
  } else {
    const std::size_t cp = a.channels(l - 1);
    s.push_back({key('d', l, "conv0", "w"), Shape{c, c, 3, 3}, true});
    s.push_back({key('d', l, "conv0", "b"), Shape{c}, false});
    s.push_back({key('d', l, "conv1", "w"), Shape{cp, c, 3, 3}, true});
    s.push_back({key('d', l, "conv1", "b"), Shape{cp}, false});
  }
  return s;
}

void add_level(NamedTensors& params, const std::vector<ParamSpec>& specs, const ArchConfig& a, Rng rng) {
  std::normal_distribution<double> normal;
  for (const auto& p : specs) {
    if (params.count(p.name)) throw Error("parameter '" + p.name + "' already exists");
    std::vector<double> v(p.shape.numel(), 0.0);
    if (p.weight) {
      const double he = std::sqrt(2.0 / static_cast<double>(fan_in(p.shape)));
      const double stddev = a.equalized_lr ? 1.0 : he;
      for (double& x : v) x = stddev * normal(rng);
    }
    params.emplace(p.name, Tensor(p.shape, std::move(v)).to(a.dtype));
  }
}

std::size_t count(const NamedTensors& p) {
  std::size_t n = 0;
  for (const auto& [k, t] : p) n += t.numel();
  return n;
}

ad::Var weight(const Bound& b, const ArchConfig& a, const std::string& name) {
  ad::Var w = b[name];
  if (!a.equalized_lr) return w;
  return ad::scale(w, std::sqrt(2.0 / static_cast<double>(fan_in(w.shape()))));
}

ad::Var conv(const Bound& b, const ArchConfig& a, ad::Var x, char side, std::size_t l, const char* layer) {
  return ad::bias_add(ad::conv2d(x, weight(b, a, key(side, l, layer, "w"))), b[key(side, l, layer, "b")]);
}

ad::Var dense(const Bound& b, const ArchConfig& a, ad::Var x, char side, std::size_t l, const char* layer) {
  return ad::bias_add(ad::dense(x, weight(b, a, key(side, l, layer, "w"))), b[key(side, l, layer, "b")]);
}

ad::Var to_image(const Bound& g, const ArchConfig& a, ad::Var h, std::size_t l) {
  ad::Var y = ad::tanh(conv(g, a, h, 'g', l, "torgb"));
  const double mid = 0.5 * (a.out_hi + a.out_lo);
  const double half = 0.5 * (a.out_hi - a.out_lo);
  ad::Var offset = g.tape().constant(Tensor::filled(Shape{1}, a.dtype, mid));
  return ad::bias_add(ad::scale(y, half), offset);
}

void check_fade(const FadeState& fs, std::size_t built_level, const char* who) {
  if (fs.level != built_level)
    throw ShapeError(std::string(who) + ": network built to level " + std::to_string(built_level) +
                     " but asked for level " + std::to_string(fs.level));
  if (!(fs.alpha >= 0.0 && fs.alpha <= 1.0)) throw Error(std::string(who) + ": alpha outside [0, 1]");
}

}  // namespace

std::string_view to_string(LossVariant v) { return v == LossVariant::wgan_clip ? "wgan_clip" : "logistic_ns"; }

LossVariant parse_loss(std::string_view name) {
  if (name == "wgan_clip") return LossVariant::wgan_clip;
  if (name == "logistic_ns") return LossVariant::logistic_ns;
  throw ConfigError("unknown loss variant '" + std::string(name) + "' (expected wgan_clip or logistic_ns)");
}

std::size_t ArchConfig::channels(std::size_t level) const {
  if (level > max_level) throw ShapeError("level " + std::to_string(level) + " above max level");
  std::size_t c = c0 << (max_level - level);
  return std::min(c_max, c);
}

void ArchConfig::validate() const {
  if (latent_dim < 1 || c0 < 1 || c_max < 1) throw ConfigError("latent_dim, c0 and c_max must be positive");
  if (max_level > 5) throw ConfigError("max_level above 5 (128 x 128) is unsupported");
  if (!(out_hi > out_lo)) throw ConfigError("generator output range must satisfy lo < hi");
}

std::size_t resolution(std::size_t level) { return std::size_t{4} << level; }

std::size_t level_of(std::size_t n) {
  for (std::size_t l = 0; l <= 10; ++l)
    if (resolution(l) == n) return l;
  throw ShapeError("image size " + std::to_string(n) + " is not 4 * 2^level");
}

std::size_t Nets::gen_parameter_count() const { return count(gen); }
std::size_t Nets::disc_parameter_count() const { return count(disc); }

Nets init_nets(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  Nets nets;
  nets.arch = arch;
  add_level(nets.gen, gen_specs(arch, 0), arch, make_rng(seed, {stream::init, 0, 0}));
  add_level(nets.disc, disc_specs(arch, 0), arch, make_rng(seed, {stream::init, 0, 1}));
  return nets;
}

void grow(Nets& nets, std::size_t to_level, std::uint64_t seed) {
  if (to_level != nets.level + 1)
    throw Error("grow must add exactly one level: at " + std::to_string(nets.level) + ", asked for " +
                std::to_string(to_level));
  if (to_level > nets.arch.max_level) throw Error("grow beyond max level " + std::to_string(nets.arch.max_level));
  add_level(nets.gen, gen_specs(nets.arch, to_level), nets.arch, make_rng(seed, {stream::init, to_level, 0}));
  add_level(nets.disc, disc_specs(nets.arch, to_level), nets.arch, make_rng(seed, {stream::init, to_level, 1}));
  nets.level = to_level;
}

Bound::Bound(ad::Tape& tape, const NamedTensors& params, bool trainable) : tape_(&tape) {
  for (const auto& [name, t] : params) vars_.emplace(name, trainable ? tape.variable(t) : tape.constant(t));
}

ad::Var Bound::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw Error("missing parameter '" + name + "'");
  return it->second;
}

NamedTensors Bound::gradients(const ad::Gradients& g) const {
  NamedTensors out;
  for (const auto& [name, v] : vars_) out.emplace(name, g.of(v));
  return out;
}

ad::Var gen_forward(const Bound& g, const ArchConfig& a, std::size_t built_level, ad::Var z, const FadeState& fs) {
  check_fade(fs, built_level, "generator");
  const double s = a.lrelu_slope;
  const std::size_t b = z.shape()[0];
  ad::Var h = ad::pixel_norm(z);
  h = ad::reshape(dense(g, a, h, 'g', 0, "dense"), Shape{b, a.channels(0), 4, 4});
  h = ad::pixel_norm(ad::leaky_relu(h, s));
  h = ad::pixel_norm(ad::leaky_relu(conv(g, a, h, 'g', 0, "conv"), s));
  ad::Var prev = h;
  for (std::size_t l = 1; l <= fs.level; ++l) {
    prev = h;
    h = ad::upsample_nearest_2x(h);
    h = ad::pixel_norm(ad::leaky_relu(conv(g, a, h, 'g', l, "conv0"), s));
    h = ad::pixel_norm(ad::leaky_relu(conv(g, a, h, 'g', l, "conv1"), s));
  }
  ad::Var out = to_image(g, a, h, fs.level);
  if (fs.level > 0 && fs.alpha < 1.0) {
    ad::Var old = ad::upsample_nearest_2x(to_image(g, a, prev, fs.level - 1));
    out = ad::lerp(out, old, fs.alpha);
  }
  return out;
}

ad::Var disc_forward(const Bound& d, const ArchConfig& a, std::size_t built_level, ad::Var x, const FadeState& fs) {
  check_fade(fs, built_level, "discriminator");
  const std::size_t r = resolution(fs.level);
  const Shape xs = x.shape();
  if (xs.rank() != 4 || xs[1] != 1 || xs[2] != r || xs[3] != r)
    throw ShapeError("discriminator at level " + std::to_string(fs.level) + " expects [B,1," + std::to_string(r) +
                     "," + std::to_string(r) + "], got " + xs.to_string());
  const double s = a.lrelu_slope;
  auto block = [&](ad::Var h, std::size_t l) {
    h = ad::leaky_relu(conv(d, a, h, 'd', l, "conv0"), s);
    h = ad::leaky_relu(conv(d, a, h, 'd', l, "conv1"), s);
    return ad::avgpool_2x(h);
  };
  ad::Var h = ad::leaky_relu(conv(d, a, x, 'd', fs.level, "fromrgb"), s);
  if (fs.level > 0) {
    h = block(h, fs.level);
    if (fs.alpha < 1.0) {
      ad::Var old = ad::leaky_relu(conv(d, a, ad::avgpool_2x(x), 'd', fs.level - 1, "fromrgb"), s);
      h = ad::lerp(h, old, fs.alpha);
    }
    for (std::size_t l = fs.level - 1; l >= 1; --l) h = block(h, l);
  }
  if (a.minibatch_stddev) h = ad::minibatch_stddev(h);
  h = ad::leaky_relu(conv(d, a, h, 'd', 0, "conv"), s);
  h = ad::reshape(h, Shape{xs[0], 16 * a.channels(0)});
  h = ad::leaky_relu(dense(d, a, h, 'd', 0, "dense0"), s);
  return dense(d, a, h, 'd', 0, "dense1");
}

ad::Var synth_measurement_path(ad::Var f_hat, std::size_t level, std::size_t max_level,
                               const imaging::NoiseModel& noise, Rng& rng) {
  if (level > max_level) throw ShapeError("synthetic path level above max level");
  ad::Var x = f_hat;
  for (std::size_t l = level; l < max_level; ++l) x = ad::upsample_nearest_2x(x);
  ad::Var k = ad::linear_map(x, imaging::dft2_map());
  const Shape s = x.shape();
  Tensor e = imaging::kspace_noise_batch(s[0], s[2], noise, x.value().dtype(), rng);
  if (noise.sigma_k > 0.0) k = ad::add(k, x.tape->constant(std::move(e)));
  ad::Var y = ad::linear_map(k, imaging::reconstruct_map());
  for (std::size_t l = level; l < max_level; ++l) y = ad::avgpool_2x(y);
  return y;
}

Tensor downscale(const Tensor& images, std::size_t from_level, std::size_t to_level) {
  if (to_level > from_level) throw ShapeError("downscale cannot increase resolution");
  Tensor t = images;
  for (std::size_t l = to_level; l < from_level; ++l) {
    const Tensor* in[] = {&t};
    t = ad::forward_primitive(ad::Primitive::avgpool_2x, in, {});
  }
  return t;
}

RealPyramid::RealPyramid(const Tensor& reconstructions, std::size_t max_level) {
  const Shape& s = reconstructions.shape();
  if (s.rank() != 4 || s[1] != 1 || s[2] != resolution(max_level) || s[3] != s[2])
    throw ShapeError("real pyramid expects [N,1," + std::to_string(resolution(max_level)) + "," +
                     std::to_string(resolution(max_level)) + "], got " + s.to_string());
  levels_.resize(max_level + 1);
  levels_[max_level] = reconstructions;
  for (std::size_t l = max_level; l > 0; --l) levels_[l - 1] = downscale(levels_[l], l, l - 1);
}

const Tensor& RealPyramid::at(std::size_t level) const {
  if (level >= levels_.size()) throw ShapeError("real pyramid has no level " + std::to_string(level));
  return levels_[level];
}

ad::Var loss_discriminator(ad::Var real_scores, ad::Var fake_scores, LossVariant variant) {
  if (variant == LossVariant::wgan_clip)
    return ad::add(ad::reduce_mean(fake_scores), ad::scale(ad::reduce_mean(real_scores), -1.0));
  return ad::add(ad::reduce_mean(ad::softplus(ad::scale(real_scores, -1.0))),
                 ad::reduce_mean(ad::softplus(fake_scores)));
}

ad::Var loss_generator(ad::Var fake_scores, LossVariant variant) {
  if (variant == LossVariant::wgan_clip) return ad::scale(ad::reduce_mean(fake_scores), -1.0);
  return ad::reduce_mean(ad::softplus(ad::scale(fake_scores, -1.0)));
}

void clip_weights(NamedTensors& params, double c) {
  if (!(c > 0.0)) throw ConfigError("clip value must be positive");
  for (auto& [name, t] : params) {
    t = dispatch(t.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto src = t.values<T>();
      std::vector<T> v(src.begin(), src.end());
      for (T& x : v) x = std::clamp(x, static_cast<T>(-c), static_cast<T>(c));
      return Tensor(t.shape(), std::move(v));
    });
  }
}

Tensor latent_batch(std::size_t batch, std::size_t dim, DType dtype, Rng& rng) {
  std::normal_distribution<double> normal;
  std::vector<double> v(batch * dim);
  for (double& x : v) x = normal(rng);
  return Tensor(Shape{batch, dim}, std::move(v)).to(dtype);
}

}  // namespace somforge::proagan
