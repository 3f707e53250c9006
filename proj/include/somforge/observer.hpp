#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "somforge/random.hpp"
#include "somforge/tensor.hpp"

namespace somforge::observer {

/// p x p crop with rows [center_row - p/2, center_row - p/2 + p).
struct ROISpec {
  std::size_t center_row = 16;
  std::size_t center_col = 16;
  std::size_t p = 16;

  static ROISpec central(std::size_t n, std::size_t p);
};

/// `count` row-major flattened ROIs of dimension `dim`, stored row by row.
struct RoiSet {
  std::size_t count = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  const double* row(std::size_t i) const { return data.data() + i * dim; }
  RoiSet slice(std::size_t begin, std::size_t end) const;
};

/// images: [N,1,n,n] or [N,n,n]. Throws ShapeError when the ROI leaves the image.
RoiSet extract_rois(const Tensor& images, const ROISpec& spec);

/// Covariance K = sigma2 * I + A A^T with A stored column-major (dim x N).
struct CovModel {
  std::size_t dim = 0;
  std::size_t rank = 0;
  std::vector<double> mean;
  std::vector<double> factor;
  double sigma2 = 0.0;

  /// Dense K, for small problems and tests.
  std::vector<double> dense() const;
};

/// Sample mean and A_j = (roi_j - mean) / sqrt(N - 1). Requires N >= 2.
CovModel fit_cov(const RoiSet& rois, double sigma2);

struct Template {
  std::vector<double> w;
  double snr = 0.0;
};

/// w = K^-1 s through the Woodbury identity; SNR^2 = s^T K^-1 s.
/// With sigma2 = 0 the covariance A A^T must be nonsingular, else NumericError.
Template hotelling_template(const CovModel& cm, const std::vector<double>& s);

/// Parametric Gaussian blob amplitude * exp(-|r - c|^2 / (2 width^2)) with
/// c = ((p-1)/2 + dy, (p-1)/2 + dx).
struct BlobSignal {
  double amplitude = 0.5;
  double width = 1.5;
  double dx = 0.0;
  double dy = 0.0;

  std::vector<double> raster(std::size_t p) const;
};

/// Signal-absent and signal-present data for each pair i: g0 = f_i + n,
/// g1 = f_i + s + n' with independent i.i.d. N(0, sigma2) noise.
struct Trials {
  RoiSet absent;
  RoiSet present;
};

/// Uses backgrounds 0..n_pairs-1; throws when fewer are available.
Trials draw_trials(const RoiSet& backgrounds, const std::vector<double>& s, double sigma2, std::size_t n_pairs,
                   Rng& rng);

struct Scores {
  std::vector<double> absent;
  std::vector<double> present;
};

Scores score(const std::vector<double>& w, const Trials& trials);
Scores run_detection_trials(const RoiSet& backgrounds, const std::vector<double>& w, const std::vector<double>& s,
                            double sigma2, std::size_t n_pairs, Rng& rng);

/// Mann-Whitney AUC, ties counted 1/2.
double empirical_auc(const std::vector<double>& absent, const std::vector<double>& present);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Threshold sweep (decide "present" when t > threshold) over midpoints
/// between consecutive distinct pooled scores, from (0,0) to (1,1).
std::vector<RocPoint> roc_points(const std::vector<double>& absent, const std::vector<double>& present);

/// Standard normal CDF.
double phi(double x);
/// AUC of an ideal linear observer on Gaussian scores: 1/2 + erf(SNR/2)/2,
/// i.e. phi(SNR/sqrt(2)).
double analytic_auc(double snr);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

struct CompareConfig {
  ROISpec roi;
  double sigma2 = 0.25;
  std::size_t n_pairs = 500;
  std::uint64_t seed = 1;
};

struct EnsembleResult {
  Template templ;
  double auc = 0.0;
  std::vector<RocPoint> roc;
};

struct Comparison {
  BlobSignal signal;
  EnsembleResult real;
  EnsembleResult synth;
  double delta_auc = 0.0;
  double template_cosine = 0.0;
  std::size_t n_cov_real = 0;
  std::size_t n_cov_synth = 0;
};

/// The last n_pairs real images are trial backgrounds; the first
/// N_real - n_pairs real images and the first min(N_synth, N_real - n_pairs)
/// synthetic images estimate the two covariances. Both templates are scored
/// on the same trials.
Comparison compare_ensembles(const Tensor& real, const Tensor& synth, const BlobSignal& signal,
                             const CompareConfig& config);

/// JSON report with the comparison fields and a config echo. `config_echo` is
/// key=value text; "[section]" lines prefix the following keys with "section.".
std::string report_json(const Comparison& c, const CompareConfig& config, const std::string& config_echo);
std::string roc_csv(const std::vector<RocPoint>& roc);

/// White noise with the per-pixel mean and variance of `images` pooled over all pixels.
Tensor matched_white_noise(const Tensor& images, std::size_t count, std::uint64_t seed);

}  // namespace somforge::observer
