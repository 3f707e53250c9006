#include "somforge/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "somforge/parallel.hpp"
#include "somforge/raster.hpp"
#include "somforge/somt.hpp"

namespace somforge::trainer {
namespace fs = std::filesystem;
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_kv(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(FormatError::Kind::invalid, "checkpoint: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& get(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(FormatError::Kind::invalid, "checkpoint: missing key " + key);
  return it->second;
}

std::uint64_t get_u64(const KeyValues& kv, const std::string& key) {
  const std::string& s = get(kv, key);
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(FormatError::Kind::invalid, "checkpoint: bad integer for " + key);
  }
}

double get_double(const KeyValues& kv, const std::string& key) {
  const std::string& s = get(kv, key);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw FormatError(FormatError::Kind::invalid, "checkpoint: bad number for " + key);
  return v;
}

void put_adam(std::ostringstream& os, somt::TensorList& tensors, const AdamState& st, const std::string& tag) {
  os << tag << "/lr=" << fmt(st.config.lr) << "\n"
     << tag << "/beta1=" << fmt(st.config.beta1) << "\n"
     << tag << "/beta2=" << fmt(st.config.beta2) << "\n"
     << tag << "/epsilon=" << fmt(st.config.epsilon) << "\n";
  for (const auto& [name, m] : st.moments) {
    os << tag << "/t/" << name << "=" << m.t << "\n";
    tensors.emplace_back(tag + "/m/" + name, m.m);
    tensors.emplace_back(tag + "/v/" + name, m.v);
  }
}

AdamState get_adam(const KeyValues& kv, const somt::TensorList& tensors, const std::string& tag) {
  AdamState st;
  st.config.lr = get_double(kv, tag + "/lr");
  st.config.beta1 = get_double(kv, tag + "/beta1");
  st.config.beta2 = get_double(kv, tag + "/beta2");
  st.config.epsilon = get_double(kv, tag + "/epsilon");
  const std::string prefix = tag + "/t/";
  for (const auto& [k, v] : kv) {
    if (k.rfind(prefix, 0) != 0) continue;
    const std::string name = k.substr(prefix.size());
    AdamMoments m;
    m.t = static_cast<std::int64_t>(get_u64(kv, k));
    m.m = somt::find(tensors, tag + "/m/" + name);
    m.v = somt::find(tensors, tag + "/v/" + name);
    st.moments.emplace(name, std::move(m));
  }
  return st;
}

NamedTensors with_prefix(const somt::TensorList& tensors, const std::string& prefix) {
  NamedTensors out;
  for (const auto& [name, t] : tensors)
    if (name.rfind(prefix, 0) == 0) out.emplace(name.substr(prefix.size()), t);
  return out;
}

Tensor gather(const Tensor& images, const std::vector<std::size_t>& idx) {
  const Shape s = images.shape();
  const std::size_t per = s[1] * s[2] * s[3];
  return dispatch(images.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = images.values<T>();
    std::vector<T> out(idx.size() * per);
    for (std::size_t b = 0; b < idx.size(); ++b)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx[b] * per), per,
                  out.begin() + static_cast<std::ptrdiff_t>(b * per));
    return Tensor(Shape{idx.size(), s[1], s[2], s[3]}, std::move(out));
  });
}

bool finite(double v) { return std::isfinite(v); }

class LogWriter {
 public:
  LogWriter(const fs::path& path, std::optional<std::uint64_t> keep_until) {
    std::vector<std::string> kept;
    if (keep_until) {
      std::ifstream in(path);
      std::string line;
      bool header = true;
      while (std::getline(in, line)) {
        if (header) {
          header = false;
          continue;
        }
        if (line.empty()) continue;
        if (std::stoull(line.substr(0, line.find(','))) <= *keep_until) kept.push_back(line);
      }
    }
    out_.open(path, std::ios::trunc);
    if (!out_) throw IoError("cannot open log '" + path.string() + "'");
    out_ << kLogHeader << "\n";
    for (const auto& l : kept) out_ << l << "\n";
    out_.flush();
  }
  void write(const LogRecord& r) {
    out_ << format_record(r) << "\n";
    out_.flush();
    if (!out_) throw IoError("log write failed");
  }

 private:
  std::ofstream out_;
};

}  // namespace

std::vector<Phase> progressive_schedule(std::size_t max_level, std::uint64_t fade_images,
                                        std::uint64_t stabilize_images) {
  std::vector<Phase> s;
  s.push_back({0, 0, stabilize_images});
  for (std::size_t l = 1; l <= max_level; ++l) s.push_back({l, fade_images, stabilize_images});
  return s;
}

void validate_schedule(const std::vector<Phase>& schedule) {
  if (schedule.empty()) throw ConfigError("schedule is empty");
  if (schedule.front().fade_images != 0) throw ConfigError("first phase must have fade_images = 0");
  if (schedule.front().level != 0) throw ConfigError("schedule must start at level 0");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (i > 0 && schedule[i].level != schedule[i - 1].level + 1)
      throw ConfigError("schedule levels must increase by exactly 1");
    if (schedule[i].fade_images + schedule[i].stabilize_images == 0)
      throw ConfigError("phase " + std::to_string(i) + " has no image budget");
  }
}

std::size_t TrainConfig::batch_for(std::size_t level) const {
  return batch.at(std::min(level, batch.size() - 1));
}

std::size_t TrainConfig::resolved_d_steps() const {
  if (d_steps > 0) return d_steps;
  return loss == proagan::LossVariant::wgan_clip ? 5 : 1;
}

void TrainConfig::validate() const {
  validate_schedule(schedule);
  if (batch.empty()) throw ConfigError("batch sizes missing");
  for (std::size_t b : batch)
    if (b < 1) throw ConfigError("batch size must be at least 1");
  if (!(adam.lr > 0) || !(adam.epsilon > 0) || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 ||
      adam.beta2 >= 1)
    throw ConfigError("invalid Adam hyperparameters");
  if (loss == proagan::LossVariant::wgan_clip && !(clip > 0)) throw ConfigError("clip must be positive");
  if (latent_dim < 1 || c0 < 1 || c_max < 1) throw ConfigError("network sizes must be positive");
  if (dataset.empty()) throw ConfigError("dataset path not set");
  if (output_dir.empty()) throw ConfigError("output directory not set");
}

std::string TrainConfig::fingerprint() const {
  std::ostringstream os;
  os << "schedule=";
  for (std::size_t i = 0; i < schedule.size(); ++i)
    os << (i ? ";" : "") << schedule[i].level << ":" << schedule[i].fade_images << ":" << schedule[i].stabilize_images;
  os << "\nbatch=";
  for (std::size_t i = 0; i < batch.size(); ++i) os << (i ? "," : "") << batch[i];
  os << "\nd_steps=" << resolved_d_steps() << "\nloss=" << proagan::to_string(loss) << "\nlr=" << fmt(adam.lr)
     << "\nbeta1=" << fmt(adam.beta1) << "\nbeta2=" << fmt(adam.beta2) << "\nepsilon=" << fmt(adam.epsilon)
     << "\nclip=" << fmt(clip) << "\nseed=" << seed << "\nlatent_dim=" << latent_dim << "\nc0=" << c0
     << "\nc_max=" << c_max << "\nminibatch_stddev=" << minibatch_stddev << "\nequalized_lr=" << equalized_lr << "\n";
  return os.str();
}

double alpha_at(const Phase& phase, std::uint64_t images_in_phase) {
  if (phase.fade_images == 0 || images_in_phase >= phase.fade_images) return 1.0;
  return static_cast<double>(images_in_phase) / static_cast<double>(phase.fade_images);
}

std::string format_record(const LogRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%llu,%zu,%.17g,%.9g,%.9g,%llu,%.3f", static_cast<unsigned long long>(r.step),
                r.level, r.alpha, r.loss_d, r.loss_g, static_cast<unsigned long long>(r.images_shown), r.seconds);
  return buf;
}

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  const auto& a = ck.nets.arch;
  std::ostringstream os;
  os << "format=somforge-checkpoint\nversion=1\n"
     << "phase=" << ck.progress.phase << "\nimages_in_phase=" << ck.progress.images_in_phase
     << "\nimages_total=" << ck.progress.images_total << "\nstep=" << ck.progress.step
     << "\nfinished=" << ck.progress.finished << "\nlevel=" << ck.nets.level << "\nlatent_dim=" << a.latent_dim
     << "\nc0=" << a.c0 << "\nc_max=" << a.c_max << "\nmax_level=" << a.max_level << "\nout_lo=" << fmt(a.out_lo)
     << "\nout_hi=" << fmt(a.out_hi) << "\nminibatch_stddev=" << a.minibatch_stddev
     << "\nequalized_lr=" << a.equalized_lr << "\nlrelu_slope=" << fmt(a.lrelu_slope)
     << "\ndtype=" << to_string(a.dtype) << "\n";
  somt::TensorList tensors;
  somt::TensorList moments;
  put_adam(os, moments, ck.adam_g, "adam_g");
  put_adam(os, moments, ck.adam_d, "adam_d");
  tensors.emplace_back("manifest", somt::text_tensor(os.str(), a.dtype));
  tensors.emplace_back("config", somt::text_tensor(ck.fingerprint, a.dtype));
  for (const auto& [name, t] : ck.nets.gen) tensors.emplace_back("gen/" + name, t);
  for (const auto& [name, t] : ck.nets.disc) tensors.emplace_back("disc/" + name, t);
  for (auto& m : moments) tensors.push_back(std::move(m));
  somt::save_tensors(path, tensors);
}

Checkpoint load_checkpoint(const fs::path& path) {
  const auto tensors = somt::load_tensors(path);
  const KeyValues kv = parse_kv(somt::tensor_text(somt::find(tensors, "manifest")));
  if (get(kv, "format") != "somforge-checkpoint")
    throw FormatError(FormatError::Kind::invalid, "'" + path.string() + "' is not a checkpoint");
  if (get(kv, "version") != "1") throw FormatError(FormatError::Kind::version_mismatch, "unsupported checkpoint version");
  Checkpoint ck;
  ck.fingerprint = somt::tensor_text(somt::find(tensors, "config"));
  ck.progress.phase = get_u64(kv, "phase");
  ck.progress.images_in_phase = get_u64(kv, "images_in_phase");
  ck.progress.images_total = get_u64(kv, "images_total");
  ck.progress.step = get_u64(kv, "step");
  ck.progress.finished = get_u64(kv, "finished") != 0;
  auto& a = ck.nets.arch;
  a.latent_dim = get_u64(kv, "latent_dim");
  a.c0 = get_u64(kv, "c0");
  a.c_max = get_u64(kv, "c_max");
  a.max_level = get_u64(kv, "max_level");
  a.out_lo = get_double(kv, "out_lo");
  a.out_hi = get_double(kv, "out_hi");
  a.minibatch_stddev = get_u64(kv, "minibatch_stddev") != 0;
  a.equalized_lr = get_u64(kv, "equalized_lr") != 0;
  a.lrelu_slope = get_double(kv, "lrelu_slope");
  a.dtype = get(kv, "dtype") == "f64" ? DType::f64 : DType::f32;
  ck.nets.level = get_u64(kv, "level");
  if (ck.nets.level > a.max_level) throw FormatError(FormatError::Kind::invalid, "checkpoint level above max level");
  ck.nets.gen = with_prefix(tensors, "gen/");
  ck.nets.disc = with_prefix(tensors, "disc/");
  if (ck.nets.gen.empty() || ck.nets.disc.empty())
    throw FormatError(FormatError::Kind::invalid, "checkpoint has no network parameters");
  ck.adam_g = get_adam(kv, tensors, "adam_g");
  ck.adam_d = get_adam(kv, tensors, "adam_d");
  return ck;
}

TrainResult train(const TrainConfig& config, const std::optional<fs::path>& resume_from) {
  config.validate();
  const auto dataset = objects::load_dataset(config.dataset);
  const std::size_t max_level = proagan::level_of(dataset.n());
  if (config.schedule.back().level > max_level)
    throw ConfigError("schedule reaches level " + std::to_string(config.schedule.back().level) +
                      " but the dataset resolution " + std::to_string(dataset.n()) + " is level " +
                      std::to_string(max_level));
  const std::string fingerprint = config.fingerprint();
  const proagan::RealPyramid pyramid(dataset.reconstructions, max_level);
  const imaging::NoiseModel noise = dataset.provenance.spec.noise;

  fs::create_directories(config.output_dir / "checkpoints");
  const fs::path log_path = config.output_dir / "train_log.csv";

  Checkpoint ck;
  ck.fingerprint = fingerprint;
  if (resume_from) {
    ck = load_checkpoint(*resume_from);
    if (ck.fingerprint != fingerprint)
      throw ConfigError("checkpoint '" + resume_from->string() + "' was written with a different configuration");
  } else {
    proagan::ArchConfig arch;
    arch.latent_dim = config.latent_dim;
    arch.c0 = config.c0;
    arch.c_max = config.c_max;
    arch.max_level = max_level;
    arch.minibatch_stddev = config.minibatch_stddev;
    arch.equalized_lr = config.equalized_lr;
    // The generator's tanh range spans the training reconstructions.
    const auto rec = dataset.reconstructions.values<float>();
    const auto [lo, hi] = std::minmax_element(rec.begin(), rec.end());
    arch.out_lo = *lo;
    arch.out_hi = *hi;
    ck.nets = proagan::init_nets(arch, config.seed);
    ck.adam_g.config = config.adam;
    ck.adam_d.config = config.adam;
  }
  LogWriter log(log_path, resume_from ? std::optional<std::uint64_t>(ck.progress.step) : std::nullopt);

  const std::size_t d_steps = config.resolved_d_steps();
  const auto t0 = std::chrono::steady_clock::now();
  auto seconds = [&] {
    if (parallel::deterministic()) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const auto& arch = ck.nets.arch;
  Progress& pr = ck.progress;
  TrainResult result;
  auto phase_path = [&](std::size_t p) {
    return config.output_dir / "checkpoints" /
           ("phase" + std::to_string(p) + "_level" + std::to_string(config.schedule[p].level) + ".somt");
  };
  for (std::size_t p = 0; p < pr.phase; ++p) result.phase_checkpoints.push_back(phase_path(p));

  auto fail = [&](const std::string& what) {
    save_checkpoint(ck, config.output_dir / "checkpoints" / "failure.somt");
    throw NumericError(what + " at step " + std::to_string(pr.step) + "; state saved to checkpoints/failure.somt");
  };

  while (pr.phase < config.schedule.size()) {
    const Phase& phase = config.schedule[pr.phase];
    const std::uint64_t budget = phase.fade_images + phase.stabilize_images;
    if (pr.images_in_phase >= budget) {
      save_checkpoint(ck, phase_path(pr.phase));
      result.phase_checkpoints.push_back(phase_path(pr.phase));
      ++pr.phase;
      pr.images_in_phase = 0;
      continue;
    }
    if (config.max_steps > 0 && pr.step >= config.max_steps) break;
    while (ck.nets.level < phase.level) proagan::grow(ck.nets, ck.nets.level + 1, config.seed);

    const std::size_t level = phase.level;
    const double alpha = alpha_at(phase, pr.images_in_phase);
    const proagan::FadeState fade{level, alpha};
    const std::size_t batch = config.batch_for(level);
    const Tensor& reals = pyramid.at(level);

    double loss_d_sum = 0;
    std::size_t d_done = 0;
    for (std::size_t k = 0; k < d_steps; ++k) {
      const std::size_t b = static_cast<std::size_t>(std::min<std::uint64_t>(batch, budget - pr.images_in_phase));
      if (b == 0) break;
      Rng real_rng = make_rng(config.seed, {stream::real_batch, pr.step, k});
      std::uniform_int_distribution<std::size_t> pick(0, pyramid.count() - 1);
      std::vector<std::size_t> idx(b);
      for (auto& i : idx) i = pick(real_rng);
      Rng z_rng = make_rng(config.seed, {stream::latent, pr.step, k});
      Rng n_rng = make_rng(config.seed, {stream::synth_noise, pr.step, k});

      ad::Tape tape;
      proagan::Bound g(tape, ck.nets.gen, false);
      proagan::Bound d(tape, ck.nets.disc, true);
      ad::Var z = tape.constant(proagan::latent_batch(b, arch.latent_dim, arch.dtype, z_rng));
      ad::Var fake = proagan::synth_measurement_path(proagan::gen_forward(g, arch, ck.nets.level, z, fade), level,
                                                     arch.max_level, noise, n_rng);
      ad::Var fake_const = tape.constant(fake.value());
      ad::Var real = tape.constant(gather(reals, idx).to(arch.dtype));
      ad::Var loss = proagan::loss_discriminator(proagan::disc_forward(d, arch, ck.nets.level, real, fade),
                                                 proagan::disc_forward(d, arch, ck.nets.level, fake_const, fade),
                                                 config.loss);
      const double ld = loss.value().item();
      if (!finite(ld)) fail("non-finite discriminator loss");
      const NamedTensors grads = d.gradients(tape.backward(loss));
      try {
        adam_step(ck.nets.disc, grads, ck.adam_d);
      } catch (const NumericError& e) {
        fail(e.what());
      }
      if (config.loss == proagan::LossVariant::wgan_clip) proagan::clip_weights(ck.nets.disc, config.clip);
      loss_d_sum += ld;
      ++d_done;
      pr.images_in_phase += b;
      pr.images_total += b;
    }

    Rng z_rng = make_rng(config.seed, {stream::latent, pr.step, d_steps});
    Rng n_rng = make_rng(config.seed, {stream::synth_noise, pr.step, d_steps});
    ad::Tape tape;
    proagan::Bound g(tape, ck.nets.gen, true);
    proagan::Bound d(tape, ck.nets.disc, false);
    ad::Var z = tape.constant(proagan::latent_batch(batch, arch.latent_dim, arch.dtype, z_rng));
    ad::Var fake = proagan::synth_measurement_path(proagan::gen_forward(g, arch, ck.nets.level, z, fade), level,
                                                   arch.max_level, noise, n_rng);
    ad::Var loss = proagan::loss_generator(proagan::disc_forward(d, arch, ck.nets.level, fake, fade), config.loss);
    const double lg = loss.value().item();
    if (!finite(lg)) fail("non-finite generator loss");
    const NamedTensors grads = g.gradients(tape.backward(loss));
    try {
      adam_step(ck.nets.gen, grads, ck.adam_g);
    } catch (const NumericError& e) {
      fail(e.what());
    }
    ++pr.step;
    log.write({pr.step, level, alpha, loss_d_sum / static_cast<double>(std::max<std::size_t>(d_done, 1)), lg,
               pr.images_total, seconds()});
    if (config.checkpoint_interval > 0 && pr.step % config.checkpoint_interval == 0)
      save_checkpoint(ck, config.output_dir / "checkpoints" / "latest.somt");
  }
  pr.finished = pr.phase >= config.schedule.size();
  result.final_checkpoint = config.output_dir / "final.somt";
  save_checkpoint(ck, result.final_checkpoint);
  result.progress = pr;
  return result;
}

Tensor sample(const Checkpoint& ck, std::size_t count, std::uint64_t seed) {
  constexpr std::size_t kBatch = 64;
  const auto& arch = ck.nets.arch;
  const std::size_t r = proagan::resolution(ck.nets.level);
  std::vector<double> out;
  out.reserve(count * r * r);
  for (std::size_t j = 0; j * kBatch < count; ++j) {
    const std::size_t b = std::min(kBatch, count - j * kBatch);
    Rng rng = make_rng(seed, {stream::sample, j});
    ad::Tape tape;
    proagan::Bound g(tape, ck.nets.gen, false);
    ad::Var z = tape.constant(proagan::latent_batch(b, arch.latent_dim, arch.dtype, rng));
    const Tensor img = proagan::gen_forward(g, arch, ck.nets.level, z, {ck.nets.level, 1.0}).value();
    for (std::size_t i = 0; i < img.numel(); ++i) out.push_back(img.at(i));
  }
  return Tensor(Shape{count, 1, r, r}, std::move(out)).to(arch.dtype);
}

std::vector<fs::path> snapshot_growth(const std::vector<fs::path>& checkpoints, const fs::path& out_dir,
                                      std::uint64_t seed, std::size_t cols, std::size_t rows) {
  if (cols < 1 || rows < 1) throw ConfigError("grid must have at least one tile");
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& path : checkpoints) {
    const Checkpoint ck = load_checkpoint(path);
    const std::size_t r = proagan::resolution(ck.nets.level);
    const Tensor s = sample(ck, cols * rows, seed);
    const std::size_t w = cols * r, h = rows * r;
    std::vector<double> grid(w * h);
    for (std::size_t t = 0; t < cols * rows; ++t)
      for (std::size_t y = 0; y < r; ++y)
        for (std::size_t x = 0; x < r; ++x)
          grid[((t / cols) * r + y) * w + (t % cols) * r + x] = s.at(t * r * r + y * r + x);
    const fs::path file = out_dir / ("growth_" + std::to_string(r) + "x" + std::to_string(r) + ".pgm");
    raster::write_pgm(file, grid, w, h, "sample_seed=" + std::to_string(seed) + "\n" + ck.fingerprint);
    written.push_back(file);
  }
  return written;
}

}  // namespace somforge::trainer
