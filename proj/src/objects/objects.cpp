#include "somforge/objects.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "somforge/parallel.hpp"

namespace somforge::objects {
namespace {

constexpr std::size_t kChunk = 64;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw FormatError(FormatError::Kind::invalid, "provenance: bad value for " + key);
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw FormatError(FormatError::Kind::invalid, "provenance: bad value for " + key);
  return v;
}

// Toroidal 1D Gaussian profile exp(-d^2 / (2 w^2)) with d the wrapped distance.
void profile(std::vector<double>& out, double center, double width, std::size_t n) {
  const double nd = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = std::abs(static_cast<double>(i) - center);
    d = std::min(d, nd - d);
    out[i] = std::exp(-d * d / (2.0 * width * width));
  }
}

void check_spec(const DatasetSpec& spec) {
  spec.lumpy.validate();
  if (spec.count < 1) throw ConfigError("dataset count must be at least 1");
  if (spec.count > std::numeric_limits<std::uint32_t>::max())
    throw ConfigError("dataset count " + std::to_string(spec.count) + " overflows u32");
  if (!(spec.noise.sigma_k >= 0.0)) throw ConfigError("sigma_k must be non-negative");
}

}  // namespace

void LumpyParams::validate() const {
  if (!(nbar >= 0.0) || !std::isfinite(nbar)) throw ConfigError("lumpy nbar must be >= 0");
  if (!(amplitude > 0.0)) throw ConfigError("lumpy amplitude must be > 0");
  if (!(width > 0.0)) throw ConfigError("lumpy width must be > 0");
  imaging::require_power_of_two(n, "lumpy image size");
}

imaging::ObjectImage<double> sample_lumpy(const LumpyParams& p, Rng& rng) {
  p.validate();
  const std::size_t n = p.n;
  imaging::ObjectImage<double> f(n);
  if (p.nbar == 0.0) return f;
  const long count = std::poisson_distribution<long>(p.nbar)(rng);
  std::uniform_real_distribution<double> pos(0.0, static_cast<double>(n));
  std::vector<double> py(n), px(n);
  for (long j = 0; j < count; ++j) {
    const double cy = pos(rng);
    const double cx = pos(rng);
    profile(py, cy, p.width, n);
    profile(px, cx, p.width, n);
    for (std::size_t r = 0; r < n; ++r) {
      const double row = p.amplitude * py[r];
      for (std::size_t c = 0; c < n; ++c) f(r, c) += row * px[c];
    }
  }
  return f;
}

std::string Provenance::to_text() const {
  std::ostringstream os;
  os << "format=somforge-dataset\n"
     << "version=1\n"
     << "seed=" << spec.seed << "\n"
     << "count=" << spec.count << "\n"
     << "n=" << spec.lumpy.n << "\n"
     << "nbar=" << format_double(spec.lumpy.nbar) << "\n"
     << "amplitude=" << format_double(spec.lumpy.amplitude) << "\n"
     << "width=" << format_double(spec.lumpy.width) << "\n"
     << "sigma_k=" << format_double(spec.noise.sigma_k) << "\n"
     << "norm_mean=" << format_double(norm_mean) << "\n"
     << "norm_rms=" << format_double(norm_rms) << "\n"
     << "object_stream=" << stream::object << "\n"
     << "noise_stream=" << stream::kspace_noise << "\n";
  return os.str();
}

Provenance Provenance::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(FormatError::Kind::invalid, "provenance: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(FormatError::Kind::invalid, std::string("provenance: missing key ") + key);
    return it->second;
  };
  if (get("format") != "somforge-dataset") throw FormatError(FormatError::Kind::invalid, "provenance: not a dataset");
  if (get("version") != "1") throw FormatError(FormatError::Kind::version_mismatch, "provenance: unsupported version");
  if (parse_u64("object_stream", get("object_stream")) != stream::object ||
      parse_u64("noise_stream", get("noise_stream")) != stream::kspace_noise)
    throw FormatError(FormatError::Kind::invalid, "provenance: unknown stream layout");
  Provenance p;
  p.spec.seed = parse_u64("seed", get("seed"));
  p.spec.count = parse_u64("count", get("count"));
  p.spec.lumpy.n = parse_u64("n", get("n"));
  p.spec.lumpy.nbar = parse_double("nbar", get("nbar"));
  p.spec.lumpy.amplitude = parse_double("amplitude", get("amplitude"));
  p.spec.lumpy.width = parse_double("width", get("width"));
  p.spec.noise.sigma_k = parse_double("sigma_k", get("sigma_k"));
  p.norm_mean = parse_double("norm_mean", get("norm_mean"));
  p.norm_rms = parse_double("norm_rms", get("norm_rms"));
  return p;
}

imaging::ObjectImage<double> regenerate_object(const Provenance& prov, std::size_t index) {
  Rng rng = make_rng(prov.spec.seed, {stream::object, index});
  auto f = sample_lumpy(prov.spec.lumpy, rng);
  for (double& v : f.pixels) v = (v - prov.norm_mean) / prov.norm_rms;
  return f;
}

imaging::KSpace<float> regenerate_measurement(const Provenance& prov, const imaging::ObjectImage<float>& stored,
                                              std::size_t index) {
  imaging::ObjectImage<double> f(stored.n, std::vector<double>(stored.pixels.begin(), stored.pixels.end()));
  Rng rng = make_rng(prov.spec.seed, {stream::kspace_noise, index});
  auto g = imaging::measure(f, prov.spec.noise, rng);
  imaging::KSpace<float> out(stored.n);
  for (std::size_t i = 0; i < g.re.size(); ++i) {
    out.re[i] = static_cast<float>(g.re[i]);
    out.im[i] = static_cast<float>(g.im[i]);
  }
  return out;
}

Dataset make_dataset(const DatasetSpec& spec) {
  check_spec(spec);
  const std::size_t count = spec.count, n = spec.lumpy.n, pix = n * n;
  const std::size_t chunks = (count + kChunk - 1) / kChunk;

  // Pass 1: raw moments, reduced in sample order.
  std::vector<double> sums(count), sumsq(count);
  parallel::for_each_chunk(chunks, [&](std::size_t c) {
    for (std::size_t i = c * kChunk; i < std::min(count, (c + 1) * kChunk); ++i) {
      Rng rng = make_rng(spec.seed, {stream::object, i});
      const auto f = sample_lumpy(spec.lumpy, rng);
      double s = 0, q = 0;
      for (double v : f.pixels) {
        s += v;
        q += v * v;
      }
      sums[i] = s;
      sumsq[i] = q;
    }
  });
  double s = 0, q = 0;
  for (std::size_t i = 0; i < count; ++i) {
    s += sums[i];
    q += sumsq[i];
  }
  const double total = static_cast<double>(count * pix);
  Provenance prov;
  prov.spec = spec;
  prov.norm_mean = s / total;
  const double var = q / total - prov.norm_mean * prov.norm_mean;
  prov.norm_rms = var > 0.0 ? std::sqrt(var) : 1.0;

  // Pass 2: regenerate, normalize, measure, reconstruct.
  std::vector<float> obj(count * pix), ks(count * 2 * pix), rec(count * pix);
  parallel::for_each_chunk(chunks, [&](std::size_t c) {
    for (std::size_t i = c * kChunk; i < std::min(count, (c + 1) * kChunk); ++i) {
      const auto f = regenerate_object(prov, i);
      imaging::ObjectImage<float> stored(n);
      for (std::size_t k = 0; k < pix; ++k) stored.pixels[k] = static_cast<float>(f.pixels[k]);
      const auto g = regenerate_measurement(prov, stored, i);
      imaging::KSpace<double> gd(n);
      for (std::size_t k = 0; k < pix; ++k) {
        gd.re[k] = g.re[k];
        gd.im[k] = g.im[k];
      }
      const auto r = imaging::reconstruct(gd);
      std::copy(stored.pixels.begin(), stored.pixels.end(), obj.begin() + static_cast<std::ptrdiff_t>(i * pix));
      std::copy(g.re.begin(), g.re.end(), ks.begin() + static_cast<std::ptrdiff_t>(2 * i * pix));
      std::copy(g.im.begin(), g.im.end(), ks.begin() + static_cast<std::ptrdiff_t>((2 * i + 1) * pix));
      for (std::size_t k = 0; k < pix; ++k) rec[i * pix + k] = static_cast<float>(r.pixels[k]);
    }
  });
  Dataset d;
  d.provenance = prov;
  d.objects = Tensor(Shape{count, 1, n, n}, std::move(obj));
  d.kspace = Tensor(Shape{count, 2, n, n}, std::move(ks));
  d.reconstructions = Tensor(Shape{count, 1, n, n}, std::move(rec));
  return d;
}

somt::TensorList to_tensors(const Dataset& d) {
  return {{kProvenance, somt::text_tensor(d.provenance.to_text())},
          {kObjects, d.objects},
          {kKSpace, d.kspace},
          {kReconstructions, d.reconstructions}};
}

Dataset from_tensors(const somt::TensorList& tensors) {
  Dataset d;
  d.provenance = Provenance::from_text(somt::tensor_text(somt::find(tensors, kProvenance)));
  d.objects = somt::find(tensors, kObjects);
  d.kspace = somt::find(tensors, kKSpace);
  d.reconstructions = somt::find(tensors, kReconstructions);
  const std::size_t count = d.provenance.spec.count, n = d.provenance.spec.lumpy.n;
  if (!(d.objects.shape() == Shape{count, 1, n, n}) || !(d.kspace.shape() == Shape{count, 2, n, n}) ||
      !(d.reconstructions.shape() == Shape{count, 1, n, n}))
    throw FormatError(FormatError::Kind::invalid, "dataset tensor shapes disagree with provenance");
  if (d.objects.dtype() != DType::f32) throw FormatError(FormatError::Kind::invalid, "dataset tensors must be f32");
  return d;
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) { somt::save_tensors(path, to_tensors(d)); }

void gen_dataset(const DatasetSpec& spec, const std::filesystem::path& path) { save_dataset(make_dataset(spec), path); }

Dataset load_dataset(const std::filesystem::path& path) { return from_tensors(somt::load_tensors(path)); }

}  // namespace somforge::objects
