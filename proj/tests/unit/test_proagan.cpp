#include <cmath>
#include <numbers>

#include "doctest.h"
#include "somforge/proagan.hpp"
#include "support/gradcheck.hpp"

using namespace somforge;
using namespace somforge::proagan;

namespace {

ArchConfig small_arch(DType dtype = DType::f32) {
  ArchConfig a;
  a.latent_dim = 8;
  a.c0 = 2;
  a.c_max = 8;
  a.max_level = 3;
  a.out_lo = -2.0;
  a.out_hi = 5.0;
  a.dtype = dtype;
  return a;
}

Tensor generate(const Nets& nets, const Tensor& z, double alpha) {
  ad::Tape tape;
  Bound g(tape, nets.gen, false);
  return gen_forward(g, nets.arch, nets.level, tape.constant(z), FadeState{nets.level, alpha}).value();
}

Tensor score(const Nets& nets, const Tensor& x, double alpha, std::size_t level) {
  ad::Tape tape;
  Bound d(tape, nets.disc, false);
  return disc_forward(d, nets.arch, nets.level, tape.constant(x), FadeState{level, alpha}).value();
}

Tensor upsample(const Tensor& t) {
  const Tensor* in[] = {&t};
  return ad::forward_primitive(ad::Primitive::upsample_nearest_2x, in, {});
}

Nets grown(const ArchConfig& a, std::size_t level, std::uint64_t seed) {
  Nets n = init_nets(a, seed);
  for (std::size_t l = 1; l <= level; ++l) grow(n, l, seed);
  return n;
}

}  // namespace

TEST_CASE("channel schedule, resolutions and levels") {
  ArchConfig a;
  CHECK(a.channels(0) == 128);
  CHECK(a.channels(1) == 64);
  CHECK(a.channels(2) == 32);
  CHECK(a.channels(3) == 16);
  for (std::size_t l = 0; l <= 5; ++l) CHECK(level_of(resolution(l)) == l);
  CHECK(resolution(5) == 128);
  CHECK_THROWS_AS(level_of(24), ShapeError);
  CHECK(parse_loss("wgan_clip") == LossVariant::wgan_clip);
  CHECK(parse_loss("logistic_ns") == LossVariant::logistic_ns);
  CHECK_THROWS_AS(parse_loss("hinge"), ConfigError);
}

TEST_CASE("generator output shapes and range at every level") {
  ArchConfig a = small_arch();
  Nets nets = init_nets(a, 1);
  Rng rng(2);
  for (std::size_t l = 0; l <= 3; ++l) {
    if (l > 0) grow(nets, l, 1);
    Tensor img = generate(nets, latent_batch(3, a.latent_dim, DType::f32, rng), 1.0);
    CHECK(img.shape() == Shape{3, 1, resolution(l), resolution(l)});
    for (std::size_t i = 0; i < img.numel(); ++i) {
      CHECK(img.at(i) >= a.out_lo);
      CHECK(img.at(i) <= a.out_hi);
    }
  }
}

TEST_CASE("grow preserves parameters and continues the previous output") {
  ArchConfig a = small_arch();
  Nets nets = init_nets(a, 7);
  Rng rng(3);
  const Tensor z = latent_batch(4, a.latent_dim, DType::f32, rng);
  std::size_t gen_count = nets.gen_parameter_count(), disc_count = nets.disc_parameter_count();
  for (std::size_t l = 1; l <= 3; ++l) {
    const Nets before = nets;
    const Tensor old_out = generate(before, z, 1.0);
    grow(nets, l, 7);
    for (const auto& [name, t] : before.gen) CHECK(nets.gen.at(name).bit_equal(t));
    for (const auto& [name, t] : before.disc) CHECK(nets.disc.at(name).bit_equal(t));
    CHECK(nets.gen_parameter_count() > gen_count);
    CHECK(nets.disc_parameter_count() > disc_count);
    gen_count = nets.gen_parameter_count();
    disc_count = nets.disc_parameter_count();

    CHECK(generate(nets, z, 0.0).bit_equal(upsample(old_out)));
    CHECK(nets.gen.at("g/l" + std::to_string(l) + "/conv1/w").shape()[0] ==
          nets.disc.at("d/l" + std::to_string(l) + "/conv0/w").shape()[0]);
  }
  CHECK_THROWS(grow(nets, 5, 7));
  Nets fresh = init_nets(a, 7);
  CHECK_THROWS(grow(fresh, 2, 7));
}

TEST_CASE("fade blend endpoints and affinity") {
  ArchConfig a = small_arch();
  Nets nets = grown(a, 2, 9);
  Rng rng(4);
  const Tensor z = latent_batch(3, a.latent_dim, DType::f32, rng);
  const Tensor o0 = generate(nets, z, 0.0), o1 = generate(nets, z, 1.0), oh = generate(nets, z, 0.5);

  ad::Tape tape;
  Bound g(tape, nets.gen, false);
  ad::Var zv = tape.constant(z);
  CHECK(gen_forward(g, a, 2, zv, FadeState{2, 0.999999}).value().numel() == o1.numel());
  CHECK_THROWS_AS(gen_forward(g, a, 2, zv, FadeState{1, 1.0}), ShapeError);

  double worst = 0;
  for (std::size_t i = 0; i < o0.numel(); ++i) worst = std::max(worst, std::abs(oh.at(i) - 0.5 * (o0.at(i) + o1.at(i))));
  CHECK(worst <= 1e-5);
}

TEST_CASE("discriminator contracts") {
  ArchConfig a = small_arch();
  Nets nets = grown(a, 2, 5);
  std::mt19937_64 rng(6);
  const Tensor x = testing::random_tensor(Shape{5, 1, 16, 16}, rng).to(DType::f32);
  const Tensor s = score(nets, x, 1.0, 2);
  CHECK(s.shape() == Shape{5, 1});

  // Batch order is preserved.
  for (std::size_t b = 0; b < 5; ++b) {
    std::vector<float> one(x.values<float>().begin() + b * 256, x.values<float>().begin() + (b + 1) * 256);
    CHECK(score(nets, Tensor(Shape{1, 1, 16, 16}, one), 1.0, 2).at(0) == doctest::Approx(s.at(b)).epsilon(1e-5));
  }

  // alpha = 0 equals the previous-level discriminator on the pooled input.
  Nets prev = grown(a, 1, 5);
  const Tensor* in[] = {&x};
  const Tensor pooled = ad::forward_primitive(ad::Primitive::avgpool_2x, in, {});
  CHECK(score(nets, x, 0.0, 2).bit_equal(score(prev, pooled, 1.0, 1)));

  Nets zero = nets;
  for (auto& [name, t] : zero.disc) t = Tensor::zeros(t.shape(), t.dtype());
  const Tensor z = score(zero, x, 0.3, 2);
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z.at(i) == 0.0);

  CHECK_THROWS_AS(score(nets, testing::random_tensor(Shape{2, 1, 8, 8}, rng).to(DType::f32), 1.0, 2), ShapeError);
}

TEST_CASE("minibatch stddev and equalized learning rate flags") {
  ArchConfig a = small_arch();
  a.minibatch_stddev = true;
  a.equalized_lr = true;
  Nets nets = grown(a, 1, 3);
  CHECK(nets.disc.at("d/l0/conv/w").shape()[1] == a.channels(0) + 1);
  double max_abs = 0;
  for (std::size_t i = 0; i < nets.gen.at("g/l0/conv/w").numel(); ++i)
    max_abs = std::max(max_abs, std::abs(nets.gen.at("g/l0/conv/w").at(i)));
  CHECK(max_abs > 1.0);  // unit-variance storage, He scale applied at run time
  std::mt19937_64 rng(1);
  const Tensor s = score(nets, testing::random_tensor(Shape{4, 1, 8, 8}, rng).to(DType::f32), 1.0, 1);
  CHECK(s.shape() == Shape{4, 1});
}

TEST_CASE("synthetic measurement path") {
  std::mt19937_64 trng(8);
  const std::size_t max_level = 3;
  SUBCASE("noiseless path returns its input") {
    for (std::size_t level = 0; level <= max_level; ++level) {
      const std::size_t r = resolution(level);
      Tensor f = testing::random_tensor(Shape{2, 1, r, r}, trng, -2, 2).to(DType::f32);
      ad::Tape tape;
      Rng rng(1);
      Tensor y = synth_measurement_path(tape.constant(f), level, max_level, imaging::NoiseModel{0.0}, rng).value();
      double worst = 0;
      for (std::size_t i = 0; i < f.numel(); ++i) worst = std::max(worst, std::abs(y.at(i) - f.at(i)));
      CHECK(worst <= 1e-4);
    }
  }
  SUBCASE("gradient of the sum is all ones") {
    Tensor f = testing::random_tensor(Shape{2, 1, 8, 8}, trng).to(DType::f32);
    ad::Tape tape;
    Rng rng(2);
    ad::Var x = tape.variable(f);
    ad::Var loss = ad::reduce_mean(synth_measurement_path(x, 1, max_level, imaging::NoiseModel{0.5}, rng));
    Tensor g = tape.backward(loss).of(x);
    for (std::size_t i = 0; i < g.numel(); ++i) CHECK(g.at(i) * f.numel() == doctest::Approx(1.0).epsilon(1e-5));
  }
  SUBCASE("fresh noise per call, reproducible per stream") {
    Tensor f = Tensor::zeros(Shape{1, 1, 4, 4}, DType::f32);
    ad::Tape tape;
    Rng rng(3), again(3);
    ad::Var x = tape.constant(f);
    Tensor a = synth_measurement_path(x, 0, max_level, imaging::NoiseModel{0.1}, rng).value();
    Tensor b = synth_measurement_path(x, 0, max_level, imaging::NoiseModel{0.1}, rng).value();
    Tensor c = synth_measurement_path(x, 0, max_level, imaging::NoiseModel{0.1}, again).value();
    CHECK_FALSE(a.bit_equal(b));
    CHECK(a.bit_equal(c));
  }
  SUBCASE("noise statistics match real reconstructions at every level") {
    const double sigma = 0.3;
    for (std::size_t level = 0; level <= max_level; ++level) {
      const std::size_t r = resolution(level), n = resolution(max_level);
      const std::size_t batch = (100000 + r * r - 1) / (r * r);
      ad::Tape tape;
      Rng rng(10 + level);
      Tensor synth = synth_measurement_path(tape.constant(Tensor::zeros(Shape{batch, 1, r, r}, DType::f64)), level,
                                            max_level, imaging::NoiseModel{sigma}, rng)
                         .value();
      std::vector<double> real;
      Rng rrng(100 + level);
      std::vector<double> full;
      for (std::size_t b = 0; b < batch; ++b) {
        auto rec = imaging::reconstruct(imaging::kspace_noise<double>(n, imaging::NoiseModel{sigma}, rrng));
        full.insert(full.end(), rec.pixels.begin(), rec.pixels.end());
      }
      Tensor real_down = downscale(Tensor(Shape{batch, 1, n, n}, std::move(full)), max_level, level);
      auto var = [](const Tensor& t) {
        double s = 0, q = 0;
        for (std::size_t i = 0; i < t.numel(); ++i) {
          s += t.at(i);
          q += t.at(i) * t.at(i);
        }
        const double m = s / t.numel();
        return q / t.numel() - m * m;
      };
      const double vs = var(synth), vr = var(real_down);
      const double analytic = sigma * sigma / std::pow(4.0, static_cast<double>(max_level - level));
      CHECK(std::abs(vs / vr - 1.0) <= 0.05);
      CHECK(std::abs(vs / analytic - 1.0) <= 0.05);
    }
  }
}

TEST_CASE("real pyramid") {
  std::mt19937_64 rng(9);
  Tensor full = testing::random_tensor(Shape{6, 1, 32, 32}, rng);
  RealPyramid pyr(full, 3);
  CHECK(pyr.at(3).bit_equal(full));
  CHECK(pyr.at(0).shape() == Shape{6, 1, 4, 4});
  CHECK(pyr.count() == 6);

  RealPyramid flat(Tensor::filled(Shape{2, 1, 32, 32}, DType::f64, 1.75), 3);
  for (std::size_t l = 0; l <= 3; ++l)
    for (std::size_t i = 0; i < flat.at(l).numel(); ++i) CHECK(flat.at(l).at(i) == 1.75);

  // Mean over the dataset commutes with downscaling.
  std::vector<double> mean(32 * 32, 0.0);
  for (std::size_t b = 0; b < 6; ++b)
    for (std::size_t i = 0; i < 1024; ++i) mean[i] += full.at(b * 1024 + i) / 6.0;
  Tensor mean_down = downscale(Tensor(Shape{1, 1, 32, 32}, mean), 3, 1);
  for (std::size_t i = 0; i < 64; ++i) {
    double m = 0;
    for (std::size_t b = 0; b < 6; ++b) m += pyr.at(1).at(b * 64 + i) / 6.0;
    CHECK(m == doctest::Approx(mean_down.at(i)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(RealPyramid(full, 2), ShapeError);
  CHECK_THROWS_AS(pyr.at(4), ShapeError);
}

TEST_CASE("loss variants") {
  ad::Tape tape;
  Tensor s = Tensor(Shape{3, 1}, std::vector<double>{0.5, -1.0, 2.0});
  ad::Var a = tape.constant(s), b = tape.constant(s);
  CHECK(loss_discriminator(a, b, LossVariant::wgan_clip).value().item() == 0.0);
  ad::Var zero = tape.constant(Tensor::zeros(Shape{4, 1}, DType::f64));
  CHECK(loss_discriminator(zero, zero, LossVariant::logistic_ns).value().item() ==
        doctest::Approx(2 * std::numbers::ln2).epsilon(1e-15));
  CHECK(loss_generator(zero, LossVariant::logistic_ns).value().item() ==
        doctest::Approx(std::numbers::ln2).epsilon(1e-15));

  for (LossVariant v : {LossVariant::wgan_clip, LossVariant::logistic_ns}) {
    ad::Tape t;
    ad::Var fake = t.variable(s);
    Tensor g = t.backward(loss_generator(fake, v)).of(fake);
    for (std::size_t i = 0; i < g.numel(); ++i) CHECK(g.at(i) < 0.0);
  }
}

TEST_CASE("weight clipping bounds every discriminator parameter") {
  ArchConfig a = small_arch();
  a.equalized_lr = true;
  Nets nets = grown(a, 1, 2);
  clip_weights(nets.disc, 0.01);
  for (const auto& [name, t] : nets.disc)
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(std::abs(t.at(i)) <= 0.01f);
  CHECK_THROWS_AS(clip_weights(nets.disc, 0.0), ConfigError);
}

TEST_CASE("network gradients agree with finite differences") {
  ArchConfig a = small_arch(DType::f64);
  a.max_level = 1;
  a.c0 = 2;
  a.c_max = 3;
  a.latent_dim = 3;
  a.minibatch_stddev = true;
  a.equalized_lr = true;
  Nets nets = grown(a, 1, 4);
  Rng rng(5);
  const Tensor z = latent_batch(3, a.latent_dim, DType::f64, rng);
  const FadeState fs{1, 0.4};

  auto objective = [&](const NamedTensors& gen, const NamedTensors& disc, ad::Gradients* grads, Bound** gb) {
    auto tape = std::make_unique<ad::Tape>();
    auto g = std::make_unique<Bound>(*tape, gen, true);
    Bound d(*tape, disc, false);
    ad::Var img = gen_forward(*g, a, 1, tape->constant(z), fs);
    ad::Var loss = loss_generator(disc_forward(d, a, 1, img, fs), LossVariant::logistic_ns);
    const double v = loss.value().item();
    if (grads) {
      *grads = tape->backward(loss);
      *gb = g.release();
      tape.release();
    }
    return v;
  };
  ad::Gradients grads;
  Bound* gb = nullptr;
  objective(nets.gen, nets.disc, &grads, &gb);
  NamedTensors analytic = gb->gradients(grads);
  delete &gb->tape();
  delete gb;

  double worst = 0;
  const double h = 1e-6;
  for (const std::string name : {"g/l0/dense/w", "g/l0/conv/b", "g/l1/conv1/w", "g/l0/torgb/w", "g/l1/torgb/b"}) {
    const Tensor orig = nets.gen.at(name);
    for (std::size_t i = 0; i < std::min<std::size_t>(orig.numel(), 6); ++i) {
      NamedTensors p = nets.gen;
      p[name] = testing::with_value(orig, i, orig.at(i) + h);
      const double fp = objective(p, nets.disc, nullptr, nullptr);
      p[name] = testing::with_value(orig, i, orig.at(i) - h);
      const double fm = objective(p, nets.disc, nullptr, nullptr);
      const double fd = (fp - fm) / (2 * h);
      worst = std::max(worst, std::abs(analytic.at(name).at(i) - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  CHECK(worst <= 1e-6);
}
