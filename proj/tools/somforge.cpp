#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>

#include "somforge/checks.hpp"
#include "somforge/commands.hpp"
#include "somforge/error.hpp"
#include "somforge/parallel.hpp"

using namespace somforge;
namespace fs = std::filesystem;

namespace exit_code {
constexpr int ok = 0;
constexpr int config = 2;
constexpr int io = 3;
constexpr int numeric = 4;
constexpr int validation = 5;
}  // namespace exit_code

namespace {

experiment::Config load_config(const std::string& path) {
  return path.empty() ? experiment::Config{} : experiment::Config::load(path);
}

int run_self_test(double dft_scale) {
  checks::NumericsOptions numerics;
  if (dft_scale != 1.0)
    numerics.dft2 = [dft_scale](const imaging::ObjectImage<double>& f) {
      auto g = imaging::dft2(f);
      for (auto& v : g.re) v *= dft_scale;
      for (auto& v : g.im) v *= dft_scale;
      return g;
    };
  bool ok = true;
  for (const checks::Suite& s : {checks::numerics(numerics), checks::observer_oracles(), checks::pipeline_degeneracy(),
                                 checks::noise_statistics(2000, false)}) {
    std::cout << s.report() << s.name << ": " << (s.pass() ? "PASS" : "FAIL") << " (" << s.seconds << " s)\n";
    ok = ok && s.pass();
  }
  std::cout << (ok ? "self-test PASSED\n" : "self-test FAILED\n");
  return ok ? exit_code::ok : exit_code::validation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn a stochastic object model from noisy k-space data and validate it with a Hotelling observer"};
  app.require_subcommand(1);
  bool deterministic = false;
  app.add_flag("--deterministic", deterministic, "Run every kernel on one thread and zero the log's wall-clock column");

  std::string config_path, out, data, real, synth, ckpt, resume;
  std::optional<std::size_t> count, size;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("gen-data", "Simulate lumpy objects and their noisy k-space measurements");
  gen->add_option("--config", config_path, "Experiment config file")->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output dataset (.somt)")->required();
  gen->add_option("--count", count, "Override [dataset] count");
  gen->add_option("--size", size, "Override [dataset] size");
  gen->add_option("--seed", seed, "Override [dataset] seed");

  auto* train = app.add_subcommand("train", "Progressively grow and train the generator and discriminator");
  train->add_option("--config", config_path, "Experiment config file")->check(CLI::ExistingFile);
  train->add_option("--data", data, "Dataset produced by gen-data")->required();
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--resume", resume, "Checkpoint to continue from");

  auto* samp = app.add_subcommand("sample", "Draw images from a trained checkpoint");
  samp->add_option("--ckpt", ckpt, "Checkpoint (.somt)")->required();
  samp->add_option("--count", count, "Number of images (default: [eval] synth_count)");
  samp->add_option("--seed", seed, "Sampling seed (default: [eval] sample_seed)");
  samp->add_option("--config", config_path, "Experiment config file for defaults")->check(CLI::ExistingFile);
  samp->add_option("--out", out, "Output samples (.somt); the grid goes next to it as .pgm")->required();

  bool check = false;
  auto* eval = app.add_subcommand("eval-ho", "Compare Hotelling-observer performance on real and synthetic images");
  eval->add_option("--config", config_path, "Experiment config file")->check(CLI::ExistingFile);
  eval->add_option("--real", real, "Dataset of true objects (.somt)")->required();
  eval->add_option("--synth", synth, "Samples or dataset to compare (.somt)")->required();
  eval->add_option("--out", out, "Output directory")->required();
  eval->add_flag("--check", check, "Exit 5 unless every signal passes and every control fails");

  double dft_scale = 1.0;
  auto* self = app.add_subcommand("self-test", "Run the fast invariant suite");
  // Fault injection for testing the suite itself; hidden from help.
  self->add_option("--inject-dft-scale", dft_scale)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? exit_code::ok : exit_code::config;
  }
  if (deterministic) parallel::set_deterministic(true);

  try {
    if (*self) return run_self_test(dft_scale);
    experiment::Config cfg = load_config(config_path);
    if (*gen) {
      if (count) cfg.dataset.count = *count;
      if (size) cfg.dataset.lumpy.n = *size;
      if (seed) cfg.dataset.seed = *seed;
      cfg.finalize();
      commands::gen_data(cfg, out, std::cout);
    } else if (*train) {
      commands::train(cfg, data, out, resume.empty() ? std::nullopt : std::optional<fs::path>(resume), std::cout);
    } else if (*samp) {
      commands::sample(ckpt, count.value_or(cfg.eval.synth_count), seed.value_or(cfg.eval.sample_seed), out,
                       std::cout);
    } else if (*eval) {
      const auto outcome = commands::eval_ho(cfg, real, synth, out, std::cout);
      std::cout << (outcome.reproduced ? "ensembles agree" : "ensembles differ") << "\n";
      if (check && !outcome.reproduced) return exit_code::validation;
    }
    return exit_code::ok;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_code::config;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return exit_code::io;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return exit_code::io;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return exit_code::numeric;
  } catch (const Error& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return exit_code::validation;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return exit_code::io;
  }
}
