#include "somforge/observer.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace somforge::observer {
namespace {

using MatrixXd = Eigen::MatrixXd;
using VectorXd = Eigen::VectorXd;
using ConstVec = Eigen::Map<const VectorXd>;
using ConstMat = Eigen::Map<const MatrixXd>;

// Sorted copy used for rank and threshold computations.
std::vector<double> sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

// Count of elements strictly greater than t in a sorted vector.
std::size_t count_above(const std::vector<double>& s, double t) {
  return static_cast<std::size_t>(s.end() - std::upper_bound(s.begin(), s.end(), t));
}

void require_nonempty(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw Error("score sets must be nonempty");
}

}  // namespace

ROISpec ROISpec::central(std::size_t n, std::size_t p) { return ROISpec{n / 2, n / 2, p}; }

RoiSet RoiSet::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > count) throw Error("ROI slice out of range");
  RoiSet out{end - begin, dim, {}};
  out.data.assign(data.begin() + static_cast<std::ptrdiff_t>(begin * dim),
                  data.begin() + static_cast<std::ptrdiff_t>(end * dim));
  return out;
}

RoiSet extract_rois(const Tensor& images, const ROISpec& spec) {
  const Shape s = images.shape();
  std::size_t n = 0;
  if (s.rank() == 4 && s[1] == 1 && s[2] == s[3]) n = s[2];
  else if (s.rank() == 3 && s[1] == s[2]) n = s[1];
  else throw ShapeError("extract_rois expects [N,1,n,n] or [N,n,n], got " + s.to_string());
  const std::size_t half = spec.p / 2;
  if (spec.p == 0 || spec.center_row < half || spec.center_col < half || spec.center_row - half + spec.p > n ||
      spec.center_col - half + spec.p > n)
    throw ShapeError("ROI of side " + std::to_string(spec.p) + " centered at (" + std::to_string(spec.center_row) +
                     "," + std::to_string(spec.center_col) + ") leaves the " + std::to_string(n) + "x" +
                     std::to_string(n) + " image");
  const std::size_t r0 = spec.center_row - half, c0 = spec.center_col - half;
  RoiSet out{s[0], spec.p * spec.p, {}};
  out.data.resize(out.count * out.dim);
  for (std::size_t i = 0; i < out.count; ++i)
    for (std::size_t r = 0; r < spec.p; ++r)
      for (std::size_t c = 0; c < spec.p; ++c)
        out.data[i * out.dim + r * spec.p + c] = images.at(i * n * n + (r0 + r) * n + c0 + c);
  return out;
}

std::vector<double> CovModel::dense() const {
  ConstMat a(factor.data(), static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(rank));
  MatrixXd k = a * a.transpose();
  k.diagonal().array() += sigma2;
  return {k.data(), k.data() + k.size()};
}

CovModel fit_cov(const RoiSet& rois, double sigma2) {
  if (rois.count < 2) throw Error("fit_cov needs at least 2 ROIs, got " + std::to_string(rois.count));
  if (!(sigma2 >= 0.0)) throw ConfigError("detection noise variance must be non-negative");
  CovModel cm;
  cm.dim = rois.dim;
  cm.rank = rois.count;
  cm.sigma2 = sigma2;
  cm.mean.assign(rois.dim, 0.0);
  for (std::size_t i = 0; i < rois.count; ++i)
    for (std::size_t k = 0; k < rois.dim; ++k) cm.mean[k] += rois.row(i)[k];
  for (double& m : cm.mean) m /= static_cast<double>(rois.count);
  const double scale = 1.0 / std::sqrt(static_cast<double>(rois.count - 1));
  cm.factor.resize(rois.dim * rois.count);
  for (std::size_t j = 0; j < rois.count; ++j)
    for (std::size_t k = 0; k < rois.dim; ++k) cm.factor[j * rois.dim + k] = (rois.row(j)[k] - cm.mean[k]) * scale;
  return cm;
}

Template hotelling_template(const CovModel& cm, const std::vector<double>& s) {
  if (s.size() != cm.dim) throw ShapeError("signal length does not match the covariance dimension");
  const auto dim = static_cast<Eigen::Index>(cm.dim), rank = static_cast<Eigen::Index>(cm.rank);
  ConstMat a(cm.factor.data(), dim, rank);
  ConstVec sv(s.data(), dim);
  VectorXd w;
  if (cm.sigma2 > 0.0) {
    // K^-1 = I/s2 - A (I + A^T A / s2)^-1 A^T / s2^2
    const double inv = 1.0 / cm.sigma2;
    MatrixXd m = MatrixXd::Identity(rank, rank);
    m.noalias() += inv * (a.transpose() * a);
    Eigen::LLT<MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) throw NumericError("Woodbury inner matrix is not positive definite");
    const VectorXd y = llt.solve(inv * (a.transpose() * sv));
    w = inv * sv - inv * (a * y);
  } else {
    const MatrixXd k = a * a.transpose();
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(k);
    const double top = eig.eigenvalues().maxCoeff();
    if (!(eig.eigenvalues().minCoeff() > 1e-12 * std::max(top, 1e-300)))
      throw NumericError("singular covariance: sigma2 = 0 and the sample covariance is rank deficient");
    w = k.ldlt().solve(sv);
  }
  Template t;
  t.w.assign(w.data(), w.data() + w.size());
  const double snr2 = sv.dot(w);
  t.snr = std::sqrt(std::max(0.0, snr2));
  return t;
}

std::vector<double> BlobSignal::raster(std::size_t p) const {
  if (!(width > 0.0)) throw ConfigError("signal width must be positive");
  if (amplitude == 0.0) throw ConfigError("signal amplitude must be nonzero");
  std::vector<double> out(p * p);
  const double c = (static_cast<double>(p) - 1.0) / 2.0;
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t col = 0; col < p; ++col) {
      const double y = static_cast<double>(r) - c - dy, x = static_cast<double>(col) - c - dx;
      out[r * p + col] = amplitude * std::exp(-(x * x + y * y) / (2.0 * width * width));
    }
  return out;
}

Trials draw_trials(const RoiSet& backgrounds, const std::vector<double>& s, double sigma2, std::size_t n_pairs,
                   Rng& rng) {
  if (backgrounds.count < n_pairs)
    throw Error("need " + std::to_string(n_pairs) + " distinct trial backgrounds, have " +
                std::to_string(backgrounds.count));
  if (s.size() != backgrounds.dim) throw ShapeError("signal length does not match the ROI dimension");
  if (!(sigma2 >= 0.0)) throw ConfigError("detection noise variance must be non-negative");
  const double sigma = std::sqrt(sigma2);
  std::normal_distribution<double> normal;
  Trials t{{n_pairs, backgrounds.dim, {}}, {n_pairs, backgrounds.dim, {}}};
  t.absent.data.resize(n_pairs * backgrounds.dim);
  t.present.data.resize(n_pairs * backgrounds.dim);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const double* f = backgrounds.row(i);
    for (std::size_t k = 0; k < backgrounds.dim; ++k) t.absent.data[i * backgrounds.dim + k] = f[k] + sigma * normal(rng);
    for (std::size_t k = 0; k < backgrounds.dim; ++k)
      t.present.data[i * backgrounds.dim + k] = f[k] + s[k] + sigma * normal(rng);
  }
  return t;
}

Scores score(const std::vector<double>& w, const Trials& trials) {
  if (w.size() != trials.absent.dim) throw ShapeError("template length does not match the ROI dimension");
  auto apply = [&](const RoiSet& set) {
    std::vector<double> out(set.count);
    for (std::size_t i = 0; i < set.count; ++i) {
      double acc = 0;
      for (std::size_t k = 0; k < set.dim; ++k) acc += w[k] * set.row(i)[k];
      out[i] = acc;
    }
    return out;
  };
  return {apply(trials.absent), apply(trials.present)};
}

Scores run_detection_trials(const RoiSet& backgrounds, const std::vector<double>& w, const std::vector<double>& s,
                            double sigma2, std::size_t n_pairs, Rng& rng) {
  return score(w, draw_trials(backgrounds, s, sigma2, n_pairs, rng));
}

double empirical_auc(const std::vector<double>& absent, const std::vector<double>& present) {
  require_nonempty(absent, present);
  // Pairs won by "present", ties counted 1/2, via per-score counts in the sorted absent set.
  const std::vector<double> a = sorted(absent);
  double wins = 0;
  for (double t : present) {
    const auto lo = std::lower_bound(a.begin(), a.end(), t);
    const auto hi = std::upper_bound(lo, a.end(), t);
    wins += static_cast<double>(lo - a.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(absent.size()) * static_cast<double>(present.size()));
}

std::vector<RocPoint> roc_points(const std::vector<double>& absent, const std::vector<double>& present) {
  require_nonempty(absent, present);
  const std::vector<double> a = sorted(absent), p = sorted(present);
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), p.begin(), p.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());
  const double na = static_cast<double>(a.size()), np = static_cast<double>(p.size());
  std::vector<RocPoint> out{{0.0, 0.0}};
  for (std::size_t k = pooled.size() - 1; k > 0; --k) {
    const double t = 0.5 * (pooled[k - 1] + pooled[k]);
    out.push_back({static_cast<double>(count_above(a, t)) / na, static_cast<double>(count_above(p, t)) / np});
  }
  out.push_back({1.0, 1.0});
  return out;
}

double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double analytic_auc(double snr) { return 0.5 * std::erfc(-snr / 2.0); }

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("cosine needs equal-length nonempty vectors");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

Comparison compare_ensembles(const Tensor& real, const Tensor& synth, const BlobSignal& signal,
                             const CompareConfig& config) {
  const Shape rs = real.shape(), ss = synth.shape();
  if (rs.rank() != ss.rank() || rs[rs.rank() - 1] != ss[ss.rank() - 1])
    throw ShapeError("real " + rs.to_string() + " and synthetic " + ss.to_string() + " resolutions differ");
  const RoiSet real_rois = extract_rois(real, config.roi);
  const RoiSet synth_rois = extract_rois(synth, config.roi);
  if (real_rois.count <= config.n_pairs + 1)
    throw Error("real ensemble of " + std::to_string(real_rois.count) + " images cannot supply " +
                std::to_string(config.n_pairs) + " trial backgrounds plus a covariance estimate");
  Comparison c;
  c.signal = signal;
  c.n_cov_real = real_rois.count - config.n_pairs;
  c.n_cov_synth = std::min(synth_rois.count, c.n_cov_real);
  // Estimation ROIs [0, n_cov_real) never overlap trial ROIs [n_cov_real, N).
  const RoiSet backgrounds = real_rois.slice(c.n_cov_real, real_rois.count);
  const std::vector<double> s = signal.raster(config.roi.p);

  c.real.templ = hotelling_template(fit_cov(real_rois.slice(0, c.n_cov_real), config.sigma2), s);
  c.synth.templ = hotelling_template(fit_cov(synth_rois.slice(0, c.n_cov_synth), config.sigma2), s);

  Rng rng = make_rng(config.seed, {stream::trials});
  const Trials trials = draw_trials(backgrounds, s, config.sigma2, config.n_pairs, rng);
  for (EnsembleResult* e : {&c.real, &c.synth}) {
    const Scores sc = score(e->templ.w, trials);
    e->auc = empirical_auc(sc.absent, sc.present);
    e->roc = roc_points(sc.absent, sc.present);
  }
  c.delta_auc = std::abs(c.real.auc - c.synth.auc);
  c.template_cosine = cosine(c.real.templ.w, c.synth.templ.w);
  return c;
}

std::string report_json(const Comparison& c, const CompareConfig& config, const std::string& config_echo) {
  using nlohmann::ordered_json;
  auto roc = [](const std::vector<RocPoint>& pts) {
    ordered_json j;
    j["fpr"] = ordered_json::array();
    j["tpr"] = ordered_json::array();
    for (const auto& p : pts) {
      j["fpr"].push_back(p.fpr);
      j["tpr"].push_back(p.tpr);
    }
    return j;
  };
  ordered_json echo = ordered_json::object();
  std::istringstream is(config_echo);
  auto trim = [](const std::string& t) {
    const auto b = t.find_first_not_of(" \t"), e = t.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : t.substr(b, e - b + 1);
  };
  std::string line, section;
  while (std::getline(is, line)) {
    line = trim(line);
    if (!line.empty() && line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2) + ".";
      continue;
    }
    const auto eq = line.find('=');
    if (eq != std::string::npos) echo[section + trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  ordered_json j;
  j["auc_real"] = c.real.auc;
  j["auc_synth"] = c.synth.auc;
  j["delta_auc"] = c.delta_auc;
  j["snr_real"] = c.real.templ.snr;
  j["snr_synth"] = c.synth.templ.snr;
  j["template_cosine"] = c.template_cosine;
  j["analytic_auc_real"] = analytic_auc(c.real.templ.snr);
  j["analytic_auc_synth"] = analytic_auc(c.synth.templ.snr);
  j["roc_real"] = roc(c.real.roc);
  j["roc_synth"] = roc(c.synth.roc);
  j["config"] = {{"signal",
                  {{"amplitude", c.signal.amplitude}, {"width", c.signal.width}, {"dx", c.signal.dx},
                   {"dy", c.signal.dy}}},
                 {"roi", {{"center_row", config.roi.center_row}, {"center_col", config.roi.center_col},
                          {"p", config.roi.p}}},
                 {"sigma2", config.sigma2},
                 {"n_pairs", config.n_pairs},
                 {"seed", config.seed},
                 {"n_cov_real", c.n_cov_real},
                 {"n_cov_synth", c.n_cov_synth},
                 {"experiment", echo}};
  return j.dump(2) + "\n";
}

std::string roc_csv(const std::vector<RocPoint>& roc) {
  std::string out = "fpr,tpr\n";
  char buf[64];
  for (const auto& p : roc) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", p.fpr, p.tpr);
    out += buf;
  }
  return out;
}

Tensor matched_white_noise(const Tensor& images, std::size_t count, std::uint64_t seed) {
  const Shape s = images.shape();
  double sum = 0, sq = 0;
  for (std::size_t i = 0; i < images.numel(); ++i) {
    sum += images.at(i);
    sq += images.at(i) * images.at(i);
  }
  const double m = sum / static_cast<double>(images.numel());
  const double sd = std::sqrt(std::max(0.0, sq / static_cast<double>(images.numel()) - m * m));
  std::vector<std::size_t> dims(s.dims().begin(), s.dims().end());
  dims[0] = count;
  const Shape out_shape{std::span<const std::size_t>(dims)};
  Rng rng = make_rng(seed, {stream::control});
  std::normal_distribution<double> normal;
  std::vector<double> v(out_shape.numel());
  for (double& x : v) x = m + sd * normal(rng);
  return Tensor(out_shape, std::move(v)).to(images.dtype());
}

}  // namespace somforge::observer
