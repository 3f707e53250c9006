#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "somforge/imaging.hpp"

namespace somforge::checks {

/// One measured invariant: passes when `value <= tolerance`.
struct Result {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct Suite {
  std::string name;
  std::vector<Result> results;
  double seconds = 0.0;

  bool pass() const;
  void add(std::string name, double value, double tolerance);
  /// One "PASS|FAIL name value tolerance" line per result, without timing, so
  /// reports of identical runs are byte-identical.
  std::string report() const;
};

using Dft2Fn = std::function<imaging::KSpace<double>(const imaging::ObjectImage<double>&)>;

struct NumericsOptions {
  /// Transform under test for the Parseval and naive-DFT checks.
  Dft2Fn dft2 = [](const imaging::ObjectImage<double>& f) { return imaging::dft2(f); };
  std::uint64_t seed = 2024;
};

/// Finite-difference gradient checks of every tape primitive (f64), DFT round
/// trip (f32), Parseval (f64), naive-DFT oracle at n=8, adjoint tests.
Suite numerics(const NumericsOptions& options = {});

/// Woodbury vs dense inversion, white-noise closed form, Gaussian AUC theory at
/// `n_pairs` pairs, Mann-Whitney vs brute-force pair counting.
Suite observer_oracles(std::size_t n_pairs = 500, std::uint64_t seed = 7);

/// Noiseless synthetic measurement path and fade-blend identities on a
/// generator at every level.
Suite pipeline_degeneracy(std::uint64_t seed = 11);

/// Variance of downscaled real reconstruction noise vs the synthetic
/// measurement path at every level from `draws` images. Per pixel, the worst
/// pixel is reported; otherwise the variance is pooled over pixels, which are
/// independent.
Suite noise_statistics(std::size_t draws = 100000, bool per_pixel = true, double sigma_k = 0.1,
                       std::uint64_t seed = 13);

}  // namespace somforge::checks
