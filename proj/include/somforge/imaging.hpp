#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "somforge/autodiff.hpp"
#include "somforge/random.hpp"

namespace somforge::imaging {

/// n x n real raster of object properties, row-major.
template <class T>
struct ObjectImage {
  std::size_t n = 0;
  std::vector<T> pixels;

  ObjectImage() = default;
  explicit ObjectImage(std::size_t size) : n(size), pixels(size * size, T(0)) {}
  ObjectImage(std::size_t size, std::vector<T> values);

  T& operator()(std::size_t row, std::size_t col) { return pixels[row * n + col]; }
  T operator()(std::size_t row, std::size_t col) const { return pixels[row * n + col]; }
};

/// n x n complex measurement array stored as separate real and imaginary planes,
/// in unitary-DFT units.
template <class T>
struct KSpace {
  std::size_t n = 0;
  std::vector<T> re;
  std::vector<T> im;

  KSpace() = default;
  explicit KSpace(std::size_t size) : n(size), re(size * size, T(0)), im(size * size, T(0)) {}
};

/// Complex image-domain result of an inverse DFT.
template <class T>
using ComplexImage = KSpace<T>;

/// Per-component standard deviation of the additive complex k-space noise.
struct NoiseModel {
  double sigma_k = 0.0;
};

bool is_power_of_two(std::size_t n) noexcept;
/// Throws ShapeError unless n is a power of two.
void require_power_of_two(std::size_t n, const char* what);

/// In-place radix-2 FFT of length n (power of two), unnormalized. `inverse`
/// selects the positive exponent.
template <class T>
void fft_inplace(std::span<std::complex<T>> data, bool inverse);

/// Unitary 2D DFT (overall scale 1/n), so that Parseval holds.
template <class T>
KSpace<T> dft2(const ObjectImage<T>& f);
/// Unitary 2D DFT of a complex array.
template <class T>
KSpace<T> dft2(const KSpace<T>& f);

/// Unitary inverse 2D DFT.
template <class T>
ComplexImage<T> idft2(const KSpace<T>& g);

template <class T>
ObjectImage<T> real_part(const ComplexImage<T>& z);

/// dft2(f) plus i.i.d. N(0, sigma_k^2) on every real and imaginary component.
/// Noise is drawn in row-major coefficient order, real before imaginary.
template <class T>
KSpace<T> measure(const ObjectImage<T>& f, const NoiseModel& noise, Rng& rng);

/// Noise-only k-space with the same draw order as `measure`.
template <class T>
KSpace<T> kspace_noise(std::size_t n, const NoiseModel& noise, Rng& rng);

/// Real part of the inverse DFT.
template <class T>
ObjectImage<T> reconstruct(const KSpace<T>& g);

/// A linear operator between real vector spaces. Complex spaces are
/// represented by interleaving (re, im), under which the real inner product
/// equals the real part of the complex one.
struct LinearOperator {
  std::string name;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::function<std::vector<double>(std::span<const double>)> apply;
  std::function<std::vector<double>(std::span<const double>)> adjoint;
};

/// Max over trials of |<Ax,y> - <x,A^T y>| / (||Ax|| ||y||). Each trial tests a
/// random pair (x, y) and the pair (x, Ax).
double adjoint_check(const LinearOperator& op, std::size_t trials, Rng& rng);

LinearOperator identity_operator(std::size_t dim);
/// `scale * I` whose declared adjoint is `adjoint_scale * I`.
LinearOperator scaled_identity_operator(std::size_t dim, double scale, double adjoint_scale);
/// Complex n x n -> complex n x n unitary DFT; adjoint is the inverse DFT.
LinearOperator dft2_operator(std::size_t n);
/// Real n x n -> complex n x n.
LinearOperator measurement_operator(std::size_t n);
/// Complex n x n -> real n x n (real part of the inverse DFT).
LinearOperator reconstruct_operator(std::size_t n);

/// Tape operator: [B,1,n,n] image batch -> [B,2,n,n] k-space batch (channel 0
/// real, channel 1 imaginary).
std::shared_ptr<const ad::LinearMap> dft2_map();
/// Tape operator: [B,2,n,n] k-space batch -> [B,1,n,n] reconstruction.
std::shared_ptr<const ad::LinearMap> reconstruct_map();

/// Draws a [B,2,n,n] noise batch matching the layout of `dft2_map`.
Tensor kspace_noise_batch(std::size_t batch, std::size_t n, const NoiseModel& noise, DType dtype, Rng& rng);

}  // namespace somforge::imaging
