#include "somforge/checks.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cfloat>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>

#include "somforge/gradcheck.hpp"
#include "somforge/observer.hpp"
#include "somforge/proagan.hpp"

namespace somforge::checks {

namespace {

using imaging::KSpace;
using imaging::ObjectImage;

class Timer {
 public:
  explicit Timer(Suite& s) : suite_(s), start_(std::chrono::steady_clock::now()) {}
  ~Timer() { suite_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  Suite& suite_;
  std::chrono::steady_clock::time_point start_;
};

KSpace<double> naive_dft2(const ObjectImage<double>& f) {
  const std::size_t n = f.n;
  KSpace<double> g(n);
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v) {
      std::complex<double> acc = 0;
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
          const double a = -2.0 * std::numbers::pi * static_cast<double>((u * r + v * c) % n) / static_cast<double>(n);
          acc += f(r, c) * std::complex<double>(std::cos(a), std::sin(a));
        }
      acc /= static_cast<double>(n);
      g.re[u * n + v] = acc.real();
      g.im[u * n + v] = acc.imag();
    }
  return g;
}

ObjectImage<double> random_image(std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal;
  ObjectImage<double> f(n);
  for (auto& p : f.pixels) p = normal(rng);
  return f;
}

double energy(const std::vector<double>& re, const std::vector<double>* im = nullptr) {
  double s = 0;
  for (std::size_t i = 0; i < re.size(); ++i) s += re[i] * re[i] + (im ? (*im)[i] * (*im)[i] : 0.0);
  return s;
}

// Max abs difference over max abs reference.
double rel_max(const std::vector<double>& got, const std::vector<double>& ref) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num = std::max(num, std::abs(got[i] - ref[i]));
    den = std::max(den, std::abs(ref[i]));
  }
  return den > 0 ? num / den : num;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.at(i) - b.at(i)));
  return worst;
}

observer::RoiSet random_rois(std::size_t count, std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal;
  observer::RoiSet r{count, dim, std::vector<double>(count * dim)};
  for (double& v : r.data) v = normal(rng);
  return r;
}

// Zero-mean Gaussian backgrounds on a p x p grid with exponential correlation.
struct GaussianField {
  Eigen::MatrixXd chol;

  GaussianField(std::size_t p, double var, double corr_len) {
    const auto d = static_cast<Eigen::Index>(p * p), side = static_cast<Eigen::Index>(p);
    Eigen::MatrixXd k(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) {
        const double dy = static_cast<double>(i / side - j / side), dx = static_cast<double>(i % side - j % side);
        k(i, j) = var * std::exp(-std::sqrt(dx * dx + dy * dy) / corr_len);
      }
    chol = k.llt().matrixL();
  }

  observer::RoiSet draw(std::size_t count, Rng& rng) const {
    const auto d = chol.rows();
    std::normal_distribution<double> normal;
    observer::RoiSet r{count, static_cast<std::size_t>(d), std::vector<double>(count * static_cast<std::size_t>(d))};
    Eigen::VectorXd z(d);
    for (std::size_t i = 0; i < count; ++i) {
      for (Eigen::Index k = 0; k < d; ++k) z(k) = normal(rng);
      const Eigen::VectorXd f = chol * z;
      std::copy(f.data(), f.data() + d, r.data.begin() + static_cast<std::ptrdiff_t>(i * r.dim));
    }
    return r;
  }

  // Exact model: K = L L^T + sigma2 I.
  observer::CovModel model(double sigma2) const {
    observer::CovModel cm;
    cm.dim = cm.rank = static_cast<std::size_t>(chol.rows());
    cm.mean.assign(cm.dim, 0.0);
    cm.factor.assign(chol.data(), chol.data() + chol.size());
    cm.sigma2 = sigma2;
    return cm;
  }
};

proagan::ArchConfig small_arch() {
  proagan::ArchConfig a;
  a.latent_dim = 8;
  a.c0 = 2;
  a.c_max = 8;
  a.max_level = 3;
  a.out_lo = -2.0;
  a.out_hi = 5.0;
  return a;
}

Tensor generate(const proagan::Nets& nets, const Tensor& z, double alpha) {
  ad::Tape tape;
  proagan::Bound g(tape, nets.gen, false);
  return proagan::gen_forward(g, nets.arch, nets.level, tape.constant(z), proagan::FadeState{nets.level, alpha})
      .value();
}

Tensor discriminate(const proagan::Nets& nets, const Tensor& x, double alpha) {
  ad::Tape tape;
  proagan::Bound d(tape, nets.disc, false);
  return proagan::disc_forward(d, nets.arch, nets.level, tape.constant(x), proagan::FadeState{nets.level, alpha})
      .value();
}

Tensor unary(ad::Primitive op, const Tensor& t) {
  const Tensor* in[] = {&t};
  return ad::forward_primitive(op, in, {});
}

Tensor scaled(const Tensor& t, double factor) {
  std::vector<double> v(t.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = t.at(i) * factor;
  return Tensor(t.shape(), std::move(v)).to(t.dtype());
}

}  // namespace

bool Suite::pass() const {
  return std::all_of(results.begin(), results.end(), [](const Result& r) { return r.pass; });
}

void Suite::add(std::string check, double value, double tolerance) {
  results.push_back({std::move(check), value, tolerance, std::isfinite(value) && value <= tolerance});
}

std::string Suite::report() const {
  std::string out;
  char buf[96];
  for (const Result& r : results) {
    std::snprintf(buf, sizeof buf, " value=%.6e tol=%.3e\n", r.value, r.tolerance);
    out += (r.pass ? "PASS " : "FAIL ") + name + ": " + r.name + buf;
  }
  return out;
}

Suite numerics(const NumericsOptions& options) {
  Suite s{"numerics", {}, 0.0};
  Timer timer(s);
  std::mt19937_64 rng(options.seed);
  auto r = [&](Shape shape) { return ad::random_tensor(shape, rng); };
  auto grad = [&](ad::Primitive op, std::vector<Tensor> in, ad::Attrs attrs = {}) {
    s.add("gradcheck " + std::string(ad::name(op)), ad::gradcheck(op, std::move(in), attrs, rng), 1e-4);
  };
  grad(ad::Primitive::conv2d, {r({2, 3, 5, 4}), r({4, 3, 3, 3})});
  grad(ad::Primitive::dense, {r({3, 7}), r({5, 7})});
  grad(ad::Primitive::leaky_relu, {r({2, 3, 4, 4})}, {0.2, {}, nullptr});
  grad(ad::Primitive::upsample_nearest_2x, {r({2, 2, 3, 3})});
  grad(ad::Primitive::avgpool_2x, {r({2, 2, 4, 6})});
  grad(ad::Primitive::add, {r({3, 4}), r({3, 4})});
  grad(ad::Primitive::scale_by_constant, {r({5})}, {-2.5, {}, nullptr});
  grad(ad::Primitive::pixel_norm, {r({2, 5, 3, 3})});
  grad(ad::Primitive::reduce_mean, {r({3, 3})});
  grad(ad::Primitive::tanh, {r({10})});
  grad(ad::Primitive::bias_add, {r({2, 3, 2, 2}), r({3})});
  grad(ad::Primitive::softplus, {r({12})});
  grad(ad::Primitive::reshape, {r({2, 6})}, {0.0, Shape{3, 2, 2}, nullptr});
  grad(ad::Primitive::minibatch_stddev, {r({4, 2, 3, 3})});
  grad(ad::Primitive::linear_map, {r({2, 1, 4, 4})}, {0.0, {}, imaging::dft2_map()});
  grad(ad::Primitive::linear_map, {r({2, 2, 4, 4})}, {0.0, {}, imaging::reconstruct_map()});

  Rng irng(options.seed + 1);
  {
    ObjectImage<double> f64 = random_image(32, irng);
    ObjectImage<float> f(32);
    for (std::size_t i = 0; i < f.pixels.size(); ++i) f.pixels[i] = static_cast<float>(f64.pixels[i]);
    const ObjectImage<float> back = imaging::real_part(imaging::idft2(imaging::dft2(f)));
    double worst = 0;
    for (std::size_t i = 0; i < f.pixels.size(); ++i)
      worst = std::max(worst, static_cast<double>(std::abs(back.pixels[i] - f.pixels[i])));
    s.add("dft2/idft2 round trip f32 n=32", worst, 1e-5);
  }
  for (std::size_t n : {8u, 32u, 128u}) {
    const ObjectImage<double> f = random_image(n, irng);
    const KSpace<double> g = options.dft2(f);
    const double ef = energy(f.pixels);
    s.add("Parseval f64 n=" + std::to_string(n), std::abs(energy(g.re, &g.im) - ef) / ef, 1e-10);
  }
  {
    const ObjectImage<double> f = random_image(8, irng);
    const KSpace<double> fast = options.dft2(f), slow = naive_dft2(f);
    std::vector<double> a(fast.re), b(slow.re);
    a.insert(a.end(), fast.im.begin(), fast.im.end());
    b.insert(b.end(), slow.im.begin(), slow.im.end());
    s.add("dft2 vs naive DFT n=8", rel_max(a, b), 1e-10);
  }
  s.add("adjoint dft2 n=8", imaging::adjoint_check(imaging::dft2_operator(8), 10, irng), 1e-10);
  s.add("adjoint dft2 n=32", imaging::adjoint_check(imaging::dft2_operator(32), 4, irng), 1e-10);
  s.add("adjoint measurement n=16", imaging::adjoint_check(imaging::measurement_operator(16), 10, irng), 1e-10);
  s.add("adjoint reconstruction n=16", imaging::adjoint_check(imaging::reconstruct_operator(16), 10, irng), 1e-10);
  return s;
}

Suite observer_oracles(std::size_t n_pairs, std::uint64_t seed) {
  Suite s{"observer", {}, 0.0};
  Timer timer(s);
  Rng rng(seed);
  {
    const observer::CovModel cm = observer::fit_cov(random_rois(100, 16, rng), 0.7);
    const std::vector<double> sig = random_rois(1, 16, rng).data;
    const std::vector<double> k = cm.dense();
    const Eigen::MatrixXd km = Eigen::Map<const Eigen::MatrixXd>(k.data(), 16, 16);
    const Eigen::VectorXd w = km.inverse() * Eigen::Map<const Eigen::VectorXd>(sig.data(), 16);
    s.add("Woodbury vs dense inverse p^2=16 N=100",
          rel_max(observer::hotelling_template(cm, sig).w, {w.data(), w.data() + w.size()}), 1e-8);
  }
  {
    const double sigma2 = 0.3;
    observer::RoiSet same{3, 16, {}};
    const std::vector<double> base = random_rois(1, 16, rng).data;
    for (int i = 0; i < 3; ++i) same.data.insert(same.data.end(), base.begin(), base.end());
    const std::vector<double> sig = observer::BlobSignal{0.5, 1.5, 0.0, 0.0}.raster(4);
    const observer::Template t = observer::hotelling_template(observer::fit_cov(same, sigma2), sig);
    double worst = 0, norm2 = 0;
    for (std::size_t i = 0; i < sig.size(); ++i) {
      const double expect = sig[i] / sigma2;
      worst = std::max(worst, std::abs(t.w[i] - expect) / std::abs(expect));
      norm2 += sig[i] * sig[i];
    }
    s.add("white-noise template w = s/sigma^2", worst, 4 * DBL_EPSILON);
    s.add("white-noise SNR^2 = |s|^2/sigma^2", std::abs(t.snr * t.snr - norm2 / sigma2) / (norm2 / sigma2),
          8 * DBL_EPSILON);
  }
  {
    const GaussianField field(8, 1.0, 2.0);
    const observer::RoiSet bg = field.draw(n_pairs, rng);
    const double sigma2 = 0.5;
    const std::vector<double> sig = observer::BlobSignal{0.6, 1.5, 0.0, 0.0}.raster(8);
    const observer::Template t = observer::hotelling_template(field.model(sigma2), sig);
    const observer::Scores sc = observer::run_detection_trials(bg, t.w, sig, sigma2, n_pairs, rng);
    const double expect = observer::analytic_auc(t.snr);
    s.add("Gaussian-background AUC within 95% binomial CI of theory",
          std::abs(observer::empirical_auc(sc.absent, sc.present) - expect),
          1.96 * std::sqrt(expect * (1 - expect) / static_cast<double>(n_pairs)));
  }
  {
    std::uniform_int_distribution<int> val(0, 6), len(1, 10);
    double worst = 0;
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<double> a(static_cast<std::size_t>(len(rng))), p(static_cast<std::size_t>(len(rng)));
      for (double& x : a) x = val(rng);
      for (double& x : p) x = val(rng);
      double wins = 0;
      for (double x : a)
        for (double y : p) wins += y > x ? 1.0 : (y == x ? 0.5 : 0.0);
      worst = std::max(worst, std::abs(observer::empirical_auc(a, p) - wins / static_cast<double>(a.size() * p.size())));
    }
    s.add("Mann-Whitney vs brute-force pair counting", worst, 1e-12);
    s.add("perfectly separated scores give AUC 1", std::abs(observer::empirical_auc({1, 2, 3}, {4, 5, 6}) - 1.0), 0.0);
  }
  return s;
}

Suite pipeline_degeneracy(std::uint64_t seed) {
  Suite s{"degeneracy", {}, 0.0};
  Timer timer(s);
  const proagan::ArchConfig arch = small_arch();
  proagan::Nets nets = proagan::init_nets(arch, seed);
  Rng rng(seed);
  const Tensor z = proagan::latent_batch(4, arch.latent_dim, DType::f32, rng);
  for (std::size_t level = 0; level <= arch.max_level; ++level) {
    const std::string at = " level " + std::to_string(level);
    proagan::Nets prev = nets;
    if (level > 0) proagan::grow(nets, level, seed);
    const Tensor out = generate(nets, z, 1.0);
    {
      ad::Tape tape;
      Rng noise(seed + level);
      const Tensor y = proagan::synth_measurement_path(tape.constant(out), level, arch.max_level,
                                                       imaging::NoiseModel{0.0}, noise)
                           .value();
      s.add("sigma_k=0 measurement path equals generator output" + at, max_abs_diff(y, out), 1e-4);
    }
    if (level == 0) continue;

    const Tensor o0 = generate(nets, z, 0.0);
    s.add("G fade alpha=0 equals upsampled previous output" + at,
          max_abs_diff(o0, unary(ad::Primitive::upsample_nearest_2x, generate(prev, z, 1.0))), 0.0);
    proagan::Nets perturbed = nets;
    const std::string old_rgb = "g/l" + std::to_string(level - 1) + "/torgb/w";
    perturbed.gen.at(old_rgb) = scaled(perturbed.gen.at(old_rgb), 3.0);
    s.add("G fade alpha=1 ignores the previous output layer" + at, max_abs_diff(generate(perturbed, z, 1.0), out),
          0.0);
    double affine = 0;
    for (double a : {0.25, 0.5, 0.75}) {
      const Tensor oa = generate(nets, z, a);
      for (std::size_t i = 0; i < oa.numel(); ++i)
        affine = std::max(affine, std::abs(oa.at(i) - ((1 - a) * o0.at(i) + a * out.at(i))));
    }
    s.add("G fade affine in alpha" + at, affine, 1e-5);

    const std::size_t r = proagan::resolution(level);
    const Tensor x = proagan::latent_batch(4, r * r, DType::f32, rng).reshaped(Shape{4, 1, r, r});
    s.add("D fade alpha=0 equals previous D on pooled input" + at,
          max_abs_diff(discriminate(nets, x, 0.0), discriminate(prev, unary(ad::Primitive::avgpool_2x, x), 1.0)),
          0.0);
    perturbed = nets;
    const std::string old_from = "d/l" + std::to_string(level - 1) + "/fromrgb/w";
    perturbed.disc.at(old_from) = scaled(perturbed.disc.at(old_from), 3.0);
    s.add("D fade alpha=1 ignores the previous input layer" + at,
          max_abs_diff(discriminate(perturbed, x, 1.0), discriminate(nets, x, 1.0)), 0.0);
  }
  return s;
}

Suite noise_statistics(std::size_t draws, bool per_pixel, double sigma_k, std::uint64_t seed) {
  Suite s{"noise statistics", {}, 0.0};
  Timer timer(s);
  const std::size_t max_level = 3, n = proagan::resolution(max_level), chunk = 500;
  const imaging::NoiseModel noise{sigma_k};
  struct Moments {
    std::vector<double> sum, sq;
    explicit Moments(std::size_t d) : sum(d, 0.0), sq(d, 0.0) {}
    void add(const Tensor& t) {
      const auto v = t.values<double>();
      const std::size_t d = sum.size();
      for (std::size_t i = 0; i < v.size(); ++i) {
        sum[i % d] += v[i];
        sq[i % d] += v[i] * v[i];
      }
    }
    double var(std::size_t i, std::size_t count) const {
      const double m = sum[i] / static_cast<double>(count);
      return (sq[i] - static_cast<double>(count) * m * m) / static_cast<double>(count - 1);
    }
  };
  std::vector<Moments> real, synth;
  for (std::size_t l = 0; l <= max_level; ++l) {
    const std::size_t r = proagan::resolution(l);
    real.emplace_back(r * r);
    synth.emplace_back(r * r);
  }
  Rng real_rng = make_rng(seed, {stream::kspace_noise});
  Rng synth_rng = make_rng(seed, {stream::synth_noise});
  for (std::size_t done = 0; done < draws; done += chunk) {
    const std::size_t b = std::min(chunk, draws - done);
    std::vector<double> full;
    full.reserve(b * n * n);
    for (std::size_t i = 0; i < b; ++i) {
      const auto rec = imaging::reconstruct(imaging::kspace_noise<double>(n, noise, real_rng));
      full.insert(full.end(), rec.pixels.begin(), rec.pixels.end());
    }
    const Tensor real_full(Shape{b, 1, n, n}, std::move(full));
    for (std::size_t l = 0; l <= max_level; ++l) {
      const std::size_t r = proagan::resolution(l);
      real[l].add(proagan::downscale(real_full, max_level, l));
      ad::Tape tape;
      synth[l].add(proagan::synth_measurement_path(tape.constant(Tensor::zeros(Shape{b, 1, r, r}, DType::f64)), l,
                                                   max_level, noise, synth_rng)
                       .value());
    }
  }
  for (std::size_t l = 0; l <= max_level; ++l) {
    const std::size_t r = proagan::resolution(l);
    const double analytic = sigma_k * sigma_k / std::pow(4.0, static_cast<double>(max_level - l));
    double ratio = 0, vs_analytic = 0, pooled_s = 0, pooled_r = 0;
    for (std::size_t i = 0; i < r * r; ++i) {
      const double vs = synth[l].var(i, draws), vr = real[l].var(i, draws);
      ratio = std::max(ratio, std::abs(vs / vr - 1.0));
      vs_analytic = std::max(vs_analytic, std::abs(vs / analytic - 1.0));
      pooled_s += vs / static_cast<double>(r * r);
      pooled_r += vr / static_cast<double>(r * r);
    }
    if (!per_pixel) {
      ratio = std::abs(pooled_s / pooled_r - 1.0);
      vs_analytic = std::abs(pooled_s / analytic - 1.0);
    }
    const std::string at = std::string(per_pixel ? " per pixel" : " pooled") + " level " + std::to_string(l);
    s.add("variance ratio synthetic/real" + at, ratio, 0.05);
    s.add("synthetic variance vs analytic" + at, vs_analytic, 0.05);
  }
  return s;
}

}  // namespace somforge::checks
