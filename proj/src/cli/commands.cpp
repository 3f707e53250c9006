#include "somforge/commands.hpp"

#include <cmath>

#include "json.hpp"
#include "somforge/error.hpp"
#include "somforge/raster.hpp"
#include "somforge/somt.hpp"

namespace somforge::commands {

namespace fs = std::filesystem;

namespace {

Tensor vector_tensor(const std::vector<double>& v, std::size_t p) { return Tensor(Shape{p, p}, v); }

}  // namespace

objects::Dataset gen_data(const experiment::Config& cfg, const fs::path& out, std::ostream& log) {
  objects::Dataset d = objects::make_dataset(cfg.dataset);
  objects::save_dataset(d, out);
  log << "dataset " << out.string() << ": count=" << d.count() << " resolution=" << d.n() << "x" << d.n()
      << " sigma_k=" << cfg.dataset.noise.sigma_k << " seed=" << cfg.dataset.seed
      << " norm_mean=" << d.provenance.norm_mean << " norm_rms=" << d.provenance.norm_rms << "\n";
  return d;
}

trainer::TrainResult train(const experiment::Config& cfg, const fs::path& data, const fs::path& out,
                           const std::optional<fs::path>& resume, std::ostream& log) {
  const objects::Dataset d = objects::load_dataset(data);
  if (d.n() != cfg.dataset.lumpy.n)
    throw ConfigError("dataset " + data.string() + " has size " + std::to_string(d.n()) + " but the config expects " +
                      std::to_string(cfg.dataset.lumpy.n));
  trainer::TrainConfig tc = cfg.train;
  tc.dataset = data;
  tc.output_dir = out;
  fs::create_directories(out);
  somt::write_file_atomic(out / "config.txt", cfg.to_text());
  log << "training " << cfg.train.schedule.size() << " phases on " << d.count() << " images at " << d.n() << "x"
      << d.n() << (resume ? " (resuming from " + resume->string() + ")" : std::string()) << "\n";
  trainer::TrainResult r = trainer::train(tc, resume);
  for (const auto& p : trainer::snapshot_growth(r.phase_checkpoints, out / "growth", cfg.train.seed))
    log << "snapshot " << p.string() << "\n";
  log << "finished at step " << r.progress.step << " after " << r.progress.images_total << " real images; final "
      << r.final_checkpoint.string() << "\n";
  return r;
}

Tensor sample(const fs::path& checkpoint, std::size_t count, std::uint64_t seed, const fs::path& out,
              std::ostream& log) {
  if (count < 1) throw ConfigError("sample count must be at least 1");
  const trainer::Checkpoint ck = trainer::load_checkpoint(checkpoint);
  const Tensor s = trainer::sample(ck, count, seed);
  const std::size_t r = s.shape()[3];
  const std::string prov = "format=somforge-samples\ncount=" + std::to_string(count) + "\nseed=" +
                           std::to_string(seed) + "\nlevel=" + std::to_string(ck.nets.level) +
                           "\nstep=" + std::to_string(ck.progress.step) + "\n" + ck.fingerprint;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  somt::save_tensors(out, {{"samples", s}, {"provenance", somt::text_tensor(prov, s.dtype())}});

  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(count))));
  const std::size_t rows = (count + cols - 1) / cols, w = cols * r, h = rows * r;
  double lo = s.at(0);
  for (std::size_t i = 0; i < s.numel(); ++i) lo = std::min(lo, s.at(i));
  std::vector<double> grid(w * h, lo);
  for (std::size_t t = 0; t < count; ++t)
    for (std::size_t y = 0; y < r; ++y)
      for (std::size_t x = 0; x < r; ++x)
        grid[((t / cols) * r + y) * w + (t % cols) * r + x] = s.at(t * r * r + y * r + x);
  fs::path pgm = out;
  pgm.replace_extension(".pgm");
  raster::write_pgm(pgm, grid, w, h, prov);
  log << "wrote " << count << " samples at " << r << "x" << r << " to " << out.string() << " and a " << cols << "x"
      << rows << " grid " << pgm.string() << "\n";
  return s;
}

Tensor load_images(const fs::path& path) {
  const somt::TensorList t = somt::load_tensors(path);
  if (somt::contains(t, objects::kObjects)) return somt::find(t, objects::kObjects);
  if (somt::contains(t, "samples")) return somt::find(t, "samples");
  throw FormatError(FormatError::Kind::invalid, path.string() + " holds neither 'objects' nor 'samples'");
}

EvalOutcome eval_ho(const experiment::Config& cfg, const fs::path& real_path, const fs::path& synth_path,
                    const fs::path& out, std::ostream& log) {
  const Tensor real = load_images(real_path);
  const Tensor synth = load_images(synth_path);
  if (real.shape().rank() != 4 || real.shape()[3] != cfg.dataset.lumpy.n)
    throw ShapeError("real images do not match the configured size " + std::to_string(cfg.dataset.lumpy.n));
  observer::CompareConfig cc;
  cc.roi = observer::ROISpec::central(cfg.dataset.lumpy.n, cfg.task.roi_size);
  cc.sigma2 = cfg.task.noise_sigma * cfg.task.noise_sigma;
  cc.n_pairs = cfg.eval.n_pairs;
  cc.seed = cfg.eval.seed;
  const std::string echo = cfg.to_text();
  fs::create_directories(out);
  somt::write_file_atomic(out / "config.txt", echo);

  auto passes = [&](const observer::Comparison& c) {
    return c.delta_auc <= cfg.eval.max_delta_auc && c.template_cosine >= cfg.eval.min_template_cosine;
  };
  std::optional<Tensor> white;
  if (cfg.eval.white_noise_control) white = observer::matched_white_noise(real, synth.shape()[0], cfg.eval.seed);

  EvalOutcome result;
  result.reproduced = true;
  nlohmann::ordered_json summary;
  summary["real"] = real_path.filename().string();
  summary["synth"] = synth_path.filename().string();
  summary["max_delta_auc"] = cfg.eval.max_delta_auc;
  summary["min_template_cosine"] = cfg.eval.min_template_cosine;
  summary["signals"] = nlohmann::ordered_json::array();
  const std::size_t p = cfg.task.roi_size;
  for (std::size_t k = 0; k < cfg.task.signal_count; ++k) {
    const std::string tag = "s" + std::to_string(k + 1);
    const observer::BlobSignal& sig = cfg.task.signals[k];
    SignalOutcome so{observer::compare_ensembles(real, synth, sig, cc), false, std::nullopt, false};
    so.pass = passes(so.comparison);
    const auto& c = so.comparison;
    somt::write_file_atomic(out / ("report_" + tag + ".json"), observer::report_json(c, cc, echo));
    somt::write_file_atomic(out / ("roc_" + tag + "_real.csv"), observer::roc_csv(c.real.roc));
    somt::write_file_atomic(out / ("roc_" + tag + "_synth.csv"), observer::roc_csv(c.synth.roc));
    const std::vector<double> s = sig.raster(p);
    somt::save_tensors(out / ("template_" + tag + ".somt"),
                       {{"w_real", vector_tensor(c.real.templ.w, p)},
                        {"w_synth", vector_tensor(c.synth.templ.w, p)},
                        {"signal", vector_tensor(s, p)},
                        {"provenance", somt::text_tensor(echo, DType::f64)}});
    raster::write_pgm(out / ("template_" + tag + "_real.pgm"), c.real.templ.w, p, p, echo);
    raster::write_pgm(out / ("template_" + tag + "_synth.pgm"), c.synth.templ.w, p, p, echo);
    raster::write_pgm(out / ("signal_" + tag + ".pgm"), s, p, p, echo);
    log << tag << ": AUC real " << c.real.auc << " synth " << c.synth.auc << " |delta| " << c.delta_auc
        << " template cosine " << c.template_cosine << " -> " << (so.pass ? "PASS" : "FAIL") << "\n";

    nlohmann::ordered_json js;
    js["signal"] = tag;
    js["auc_real"] = c.real.auc;
    js["auc_synth"] = c.synth.auc;
    js["delta_auc"] = c.delta_auc;
    js["template_cosine"] = c.template_cosine;
    js["pass"] = so.pass;
    if (white) {
      so.control = observer::compare_ensembles(real, *white, sig, cc);
      so.control_fails = !passes(*so.control);
      somt::write_file_atomic(out / ("control_" + tag + ".json"), observer::report_json(*so.control, cc, echo));
      log << tag << " white-noise control: |delta| " << so.control->delta_auc << " template cosine "
          << so.control->template_cosine << " -> " << (so.control_fails ? "fails thresholds (expected)" : "PASSES")
          << "\n";
      js["control_delta_auc"] = so.control->delta_auc;
      js["control_template_cosine"] = so.control->template_cosine;
      js["control_fails"] = so.control_fails;
    }
    result.reproduced = result.reproduced && so.pass && (!white || so.control_fails);
    summary["signals"].push_back(js);
    result.signals.push_back(std::move(so));
  }
  summary["reproduced"] = result.reproduced;
  summary["config"] = echo;
  somt::write_file_atomic(out / "summary.json", summary.dump(2) + "\n");
  return result;
}

}  // namespace somforge::commands
