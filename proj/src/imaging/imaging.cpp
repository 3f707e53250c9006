#include "somforge/imaging.hpp"

#include <cmath>
#include <numbers>

namespace somforge::imaging {
namespace {

// Twiddles exp(-2*pi*i*k/n) for k < n/2, evaluated in double.
const std::vector<std::complex<double>>& twiddles(std::size_t n) {
  thread_local std::size_t cached_n = 0;
  thread_local std::vector<std::complex<double>> cached;
  if (cached_n != n) {
    cached.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      cached[k] = {std::cos(a), std::sin(a)};
    }
    cached_n = n;
  }
  return cached;
}

template <class T>
void fft2_inplace(std::vector<std::complex<T>>& a, std::size_t n, bool inverse) {
  for (std::size_t r = 0; r < n; ++r) fft_inplace<T>(std::span(a.data() + r * n, n), inverse);
  std::vector<std::complex<T>> column(n);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t r = 0; r < n; ++r) column[r] = a[r * n + c];
    fft_inplace<T>(std::span(column), inverse);
    for (std::size_t r = 0; r < n; ++r) a[r * n + c] = column[r];
  }
  // 1/sqrt(n) per axis; exact for powers of two.
  const T s = T(1) / static_cast<T>(n);
  for (auto& v : a) v *= s;
}

template <class T>
std::vector<std::complex<T>> to_complex(const KSpace<T>& g) {
  std::vector<std::complex<T>> a(g.n * g.n);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = {g.re[i], g.im[i]};
  return a;
}

template <class T>
KSpace<T> from_complex(const std::vector<std::complex<T>>& a, std::size_t n) {
  KSpace<T> g(n);
  for (std::size_t i = 0; i < a.size(); ++i) {
    g.re[i] = a[i].real();
    g.im[i] = a[i].imag();
  }
  return g;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

KSpace<double> unpack(std::span<const double> v, std::size_t n) {
  KSpace<double> g(n);
  for (std::size_t i = 0; i < n * n; ++i) {
    g.re[i] = v[2 * i];
    g.im[i] = v[2 * i + 1];
  }
  return g;
}

std::vector<double> pack(const KSpace<double>& g) {
  std::vector<double> v(2 * g.n * g.n);
  for (std::size_t i = 0; i < g.n * g.n; ++i) {
    v[2 * i] = g.re[i];
    v[2 * i + 1] = g.im[i];
  }
  return v;
}

}  // namespace

template <class T>
ObjectImage<T>::ObjectImage(std::size_t size, std::vector<T> values) : n(size), pixels(std::move(values)) {
  if (pixels.size() != n * n)
    throw ShapeError("object image of size " + std::to_string(n) + " needs " + std::to_string(n * n) + " pixels");
}

bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

void require_power_of_two(std::size_t n, const char* what) {
  if (!is_power_of_two(n))
    throw ShapeError(std::string(what) + ": size " + std::to_string(n) + " is not a power of two");
}

template <class T>
void fft_inplace(std::span<std::complex<T>> a, bool inverse) {
  const std::size_t n = a.size();
  require_power_of_two(n, "fft");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const auto& tw = twiddles(n);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const std::complex<double>& w0 = tw[k * stride];
        const std::complex<T> w(static_cast<T>(w0.real()), static_cast<T>(inverse ? -w0.imag() : w0.imag()));
        const std::complex<T> u = a[start + k];
        const std::complex<T> v = a[start + k + half] * w;
        a[start + k] = u + v;
        a[start + k + half] = u - v;
      }
    }
  }
}

template <class T>
KSpace<T> dft2(const ObjectImage<T>& f) {
  require_power_of_two(f.n, "dft2");
  std::vector<std::complex<T>> a(f.pixels.begin(), f.pixels.end());
  fft2_inplace(a, f.n, false);
  return from_complex(a, f.n);
}

template <class T>
KSpace<T> dft2(const KSpace<T>& f) {
  require_power_of_two(f.n, "dft2");
  auto a = to_complex(f);
  fft2_inplace(a, f.n, false);
  return from_complex(a, f.n);
}

template <class T>
ComplexImage<T> idft2(const KSpace<T>& g) {
  require_power_of_two(g.n, "idft2");
  auto a = to_complex(g);
  fft2_inplace(a, g.n, true);
  return from_complex(a, g.n);
}

template <class T>
ObjectImage<T> real_part(const ComplexImage<T>& z) {
  return ObjectImage<T>(z.n, z.re);
}

template <class T>
KSpace<T> kspace_noise(std::size_t n, const NoiseModel& noise, Rng& rng) {
  if (!(noise.sigma_k >= 0.0)) throw Error("noise model: sigma_k must be >= 0");
  KSpace<T> g(n);
  if (noise.sigma_k == 0.0) return g;
  std::normal_distribution<double> normal(0.0, noise.sigma_k);
  for (std::size_t i = 0; i < n * n; ++i) {
    g.re[i] = static_cast<T>(normal(rng));
    g.im[i] = static_cast<T>(normal(rng));
  }
  return g;
}

template <class T>
KSpace<T> measure(const ObjectImage<T>& f, const NoiseModel& noise, Rng& rng) {
  KSpace<T> g = dft2(f);
  if (noise.sigma_k == 0.0) return g;
  const KSpace<T> e = kspace_noise<T>(f.n, noise, rng);
  for (std::size_t i = 0; i < g.re.size(); ++i) {
    g.re[i] += e.re[i];
    g.im[i] += e.im[i];
  }
  return g;
}

template <class T>
ObjectImage<T> reconstruct(const KSpace<T>& g) {
  return real_part(idft2(g));
}

double adjoint_check(const LinearOperator& op, std::size_t trials, Rng& rng) {
  if (trials < 1) throw Error("adjoint_check: trials must be >= 1");
  std::normal_distribution<double> normal;
  double worst = 0.0;
  auto pair_error = [&](const std::vector<double>& x, const std::vector<double>& ax, const std::vector<double>& y) {
    const std::vector<double> aty = op.adjoint(y);
    const double denom = norm(ax) * norm(y);
    if (denom == 0.0) return 0.0;
    return std::abs(dot(ax, y) - dot(x, aty)) / denom;
  };
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> x(op.input_dim), y(op.output_dim);
    for (auto& v : x) v = normal(rng);
    for (auto& v : y) v = normal(rng);
    const std::vector<double> ax = op.apply(x);
    worst = std::max(worst, pair_error(x, ax, y));
    worst = std::max(worst, pair_error(x, ax, ax));
  }
  return worst;
}

LinearOperator identity_operator(std::size_t dim) { return scaled_identity_operator(dim, 1.0, 1.0); }

LinearOperator scaled_identity_operator(std::size_t dim, double scale, double adjoint_scale) {
  auto scaled = [](double s) {
    return [s](std::span<const double> v) {
      std::vector<double> out(v.begin(), v.end());
      for (auto& x : out) x *= s;
      return out;
    };
  };
  return {"scaled_identity", dim, dim, scaled(scale), scaled(adjoint_scale)};
}

LinearOperator dft2_operator(std::size_t n) {
  require_power_of_two(n, "dft2_operator");
  return {"dft2", 2 * n * n, 2 * n * n, [n](std::span<const double> v) { return pack(dft2(unpack(v, n))); },
          [n](std::span<const double> v) { return pack(idft2(unpack(v, n))); }};
}

LinearOperator measurement_operator(std::size_t n) {
  require_power_of_two(n, "measurement_operator");
  return {"measure (noiseless)", n * n, 2 * n * n,
          [n](std::span<const double> v) {
            return pack(dft2(ObjectImage<double>(n, std::vector<double>(v.begin(), v.end()))));
          },
          [n](std::span<const double> v) { return reconstruct(unpack(v, n)).pixels; }};
}

LinearOperator reconstruct_operator(std::size_t n) {
  require_power_of_two(n, "reconstruct_operator");
  return {"reconstruct", 2 * n * n, n * n, [n](std::span<const double> v) { return reconstruct(unpack(v, n)).pixels; },
          [n](std::span<const double> v) {
            return pack(dft2(ObjectImage<double>(n, std::vector<double>(v.begin(), v.end()))));
          }};
}

namespace {

// Applies fn to each image of a [B,Cin,n,n] batch, producing [B,Cout,n,n].
class BatchedMap : public ad::LinearMap {
 protected:
  template <class T, class Fn>
  static Tensor per_item(const Tensor& x, std::size_t in_ch, std::size_t out_ch, Fn fn, const char* what) {
    const Shape& s = x.shape();
    if (s.rank() != 4 || s[1] != in_ch || s[2] != s[3])
      throw ShapeError(std::string(what) + ": expected [B," + std::to_string(in_ch) + ",n,n], got " + s.to_string());
    const std::size_t n = s[2];
    require_power_of_two(n, what);
    const std::size_t plane = n * n;
    auto v = x.values<T>();
    std::vector<T> out(s[0] * out_ch * plane);
    for (std::size_t b = 0; b < s[0]; ++b) fn(v.data() + b * in_ch * plane, out.data() + b * out_ch * plane, n);
    return Tensor(Shape{s[0], out_ch, n, n}, std::move(out));
  }

  template <class T>
  static void forward_dft(const T* in, T* out, std::size_t n) {
    const KSpace<T> g = dft2(ObjectImage<T>(n, std::vector<T>(in, in + n * n)));
    std::copy(g.re.begin(), g.re.end(), out);
    std::copy(g.im.begin(), g.im.end(), out + n * n);
  }

  template <class T>
  static void inverse_real(const T* in, T* out, std::size_t n) {
    KSpace<T> g(n);
    std::copy(in, in + n * n, g.re.begin());
    std::copy(in + n * n, in + 2 * n * n, g.im.begin());
    const ObjectImage<T> r = reconstruct(g);
    std::copy(r.pixels.begin(), r.pixels.end(), out);
  }

  static Tensor to_kspace(const Tensor& x) {
    return dispatch(x.dtype(), [&](auto t) {
      using T = decltype(t);
      return per_item<T>(x, 1, 2, forward_dft<T>, "dft2");
    });
  }
  static Tensor to_image(const Tensor& y) {
    return dispatch(y.dtype(), [&](auto t) {
      using T = decltype(t);
      return per_item<T>(y, 2, 1, inverse_real<T>, "reconstruct");
    });
  }
};

class Dft2Map final : public BatchedMap {
 public:
  std::string name() const override { return "dft2"; }
  Shape output_shape(const Shape& s) const override { return Shape{s[0], 2, s[2], s[3]}; }
  Tensor apply(const Tensor& x) const override { return to_kspace(x); }
  Tensor adjoint(const Tensor& y) const override { return to_image(y); }
};

class ReconstructMap final : public BatchedMap {
 public:
  std::string name() const override { return "reconstruct"; }
  Shape output_shape(const Shape& s) const override { return Shape{s[0], 1, s[2], s[3]}; }
  Tensor apply(const Tensor& y) const override { return to_image(y); }
  Tensor adjoint(const Tensor& x) const override { return to_kspace(x); }
};

}  // namespace

std::shared_ptr<const ad::LinearMap> dft2_map() {
  static const auto map = std::make_shared<const Dft2Map>();
  return map;
}

std::shared_ptr<const ad::LinearMap> reconstruct_map() {
  static const auto map = std::make_shared<const ReconstructMap>();
  return map;
}

Tensor kspace_noise_batch(std::size_t batch, std::size_t n, const NoiseModel& noise, DType dtype, Rng& rng) {
  return dispatch(dtype, [&](auto t) {
    using T = decltype(t);
    const std::size_t plane = n * n;
    std::vector<T> out(batch * 2 * plane);
    for (std::size_t b = 0; b < batch; ++b) {
      const KSpace<T> e = kspace_noise<T>(n, noise, rng);
      std::copy(e.re.begin(), e.re.end(), out.begin() + b * 2 * plane);
      std::copy(e.im.begin(), e.im.end(), out.begin() + b * 2 * plane + plane);
    }
    return Tensor(Shape{batch, 2, n, n}, std::move(out));
  });
}

#define SOMFORGE_INSTANTIATE(T)                                                      \
  template struct ObjectImage<T>;                                                    \
  template void fft_inplace<T>(std::span<std::complex<T>>, bool);                    \
  template KSpace<T> dft2<T>(const ObjectImage<T>&);                                 \
  template KSpace<T> dft2<T>(const KSpace<T>&);                                      \
  template ComplexImage<T> idft2<T>(const KSpace<T>&);                               \
  template ObjectImage<T> real_part<T>(const ComplexImage<T>&);                      \
  template KSpace<T> measure<T>(const ObjectImage<T>&, const NoiseModel&, Rng&);     \
  template KSpace<T> kspace_noise<T>(std::size_t, const NoiseModel&, Rng&);          \
  template ObjectImage<T> reconstruct<T>(const KSpace<T>&);

SOMFORGE_INSTANTIATE(float)
SOMFORGE_INSTANTIATE(double)

#undef SOMFORGE_INSTANTIATE

}  // namespace somforge::imaging
