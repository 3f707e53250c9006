// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.
//
//   acceptance [--config FILE] [--work DIR] [--runs N]
//
// Criteria 1-5 run N times (default 2) in deterministic mode, each into its
// own directory; criterion 6 compares every file of the runs byte for byte.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "somforge/checks.hpp"
#include "somforge/commands.hpp"
#include "somforge/parallel.hpp"
#include "somforge/somt.hpp"

using namespace somforge;
namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

Verdict suite_verdict(const checks::Suite& s, double budget_seconds, const fs::path& report) {
  somt::write_file_atomic(report, s.report());
  std::size_t failed = 0;
  for (const auto& r : s.results) failed += r.pass ? 0 : 1;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu checks, %zu failed, %.1f s of %.0f s budget", s.results.size(), failed,
                s.seconds, budget_seconds);
  std::string detail = buf;
  for (const auto& r : s.results)
    if (!r.pass) detail += "; failed: " + r.name;
  return {s.pass() && s.seconds <= budget_seconds, detail};
}

struct RunResult {
  std::vector<Verdict> criteria;  // criteria 1..5
};

RunResult run_once(const experiment::Config& cfg, const fs::path& dir, std::ostream& log) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  RunResult rr;
  log << "== run in " << dir.string() << "\n";

  rr.criteria.push_back(suite_verdict(checks::numerics(), 60, dir / "criterion1.txt"));
  rr.criteria.push_back(suite_verdict(checks::observer_oracles(500), 120, dir / "criterion2.txt"));
  rr.criteria.push_back(suite_verdict(checks::pipeline_degeneracy(), 600, dir / "criterion3.txt"));
  rr.criteria.push_back(
      suite_verdict(checks::noise_statistics(100000, true, cfg.dataset.noise.sigma_k), 3600, dir / "criterion4.txt"));
  for (std::size_t i = 0; i < 4; ++i)
    log << "criterion " << i + 1 << ": " << (rr.criteria[i].pass ? "pass" : "FAIL") << " (" << rr.criteria[i].detail
        << ")\n";

  const auto t0 = std::chrono::steady_clock::now();
  Verdict e2e;
  try {
    commands::gen_data(cfg, dir / "data.somt", log);
    const trainer::TrainResult tr = commands::train(cfg, dir / "data.somt", dir / "train", std::nullopt, log);
    log << "training took " << seconds_since(t0) << " s\n";
    commands::sample(tr.final_checkpoint, cfg.eval.synth_count, cfg.eval.sample_seed, dir / "samples.somt", log);
    const commands::EvalOutcome ev = commands::eval_ho(cfg, dir / "data.somt", dir / "samples.somt", dir / "eval", log);
    std::ostringstream d;
    d.precision(4);
    for (std::size_t k = 0; k < ev.signals.size(); ++k) {
      const auto& s = ev.signals[k];
      d << (k ? "; " : "") << "s" << k + 1 << " |dAUC| " << s.comparison.delta_auc << " cosine "
        << s.comparison.template_cosine << (s.pass ? " ok" : " out of bounds");
      if (s.control)
        d << ", control |dAUC| " << s.control->delta_auc << " cosine " << s.control->template_cosine
          << (s.control_fails ? " rejected" : " NOT rejected");
    }
    d << "; " << static_cast<long>(seconds_since(t0)) << " s";
    e2e = {ev.reproduced, d.str()};
  } catch (const std::exception& e) {
    e2e = {false, std::string("error: ") + e.what()};
  }
  log << "criterion 5: " << (e2e.pass ? "pass" : "FAIL") << " (" << e2e.detail << ")\n";
  rr.criteria.push_back(e2e);
  return rr;
}

// Relative paths of every regular file under `root`, mapped to their bytes.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = somt::read_file(e.path());
  return files;
}

Verdict compare_runs(const std::vector<fs::path>& dirs) {
  if (dirs.size() < 2) return {false, "needs at least two runs"};
  const auto ref = snapshot(dirs[0]);
  std::vector<std::string> differ;
  for (std::size_t i = 1; i < dirs.size(); ++i) {
    const auto other = snapshot(dirs[i]);
    for (const auto& [name, bytes] : ref) {
      const auto it = other.find(name);
      if (it == other.end() || it->second != bytes) differ.push_back(name);
    }
    for (const auto& [name, bytes] : other)
      if (!ref.contains(name)) differ.push_back(name);
  }
  std::size_t logs = 0, ckpts = 0, reports = 0;
  for (const auto& [name, bytes] : ref) {
    logs += name.ends_with(".csv") && name.find("log") != std::string::npos;
    ckpts += name.find("checkpoints") != std::string::npos || name.ends_with("final.somt");
    reports += name.ends_with(".json") || name.starts_with("criterion");
  }
  std::string detail = std::to_string(ref.size()) + " files (" + std::to_string(logs) + " logs, " +
                       std::to_string(ckpts) + " checkpoints, " + std::to_string(reports) + " reports)";
  if (differ.empty()) return {logs > 0 && ckpts > 0 && reports > 0, detail + " byte-identical"};
  detail += ", " + std::to_string(differ.size()) + " differ:";
  for (std::size_t i = 0; i < differ.size() && i < 5; ++i) detail += " " + differ[i];
  return {false, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run"};
  std::string config_path = std::string(SOMFORGE_SOURCE_DIR) + "/configs/acceptance.conf";
  std::string work = "acceptance_work";
  std::size_t runs = 2;
  app.add_option("--config", config_path, "Experiment config")->check(CLI::ExistingFile);
  app.add_option("--work", work, "Scratch directory for the runs");
  app.add_option("--runs", runs, "Number of deterministic repetitions")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  parallel::set_deterministic(true);
  const auto t0 = std::chrono::steady_clock::now();
  const experiment::Config cfg = experiment::Config::load(config_path);
  std::vector<fs::path> dirs;
  std::vector<RunResult> results;
  for (std::size_t i = 0; i < runs; ++i) {
    dirs.push_back(fs::path(work) / ("run" + std::to_string(i + 1)));
    results.push_back(run_once(cfg, dirs.back(), std::cerr));
  }

  const char* names[] = {"numerics suite", "observer suite", "pipeline degeneracy", "noise-statistics match",
                         "end-to-end ROC agreement with white-noise control"};
  bool all = true;
  for (std::size_t c = 0; c < 5; ++c) {
    bool pass = true;
    for (const auto& r : results) pass = pass && r.criteria[c].pass;
    all = all && pass;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c + 1 << " (" << names[c]
              << "): " << results[0].criteria[c].detail << "\n";
  }
  const Verdict repro = runs >= 2 ? compare_runs(dirs) : Verdict{false, "skipped: needs --runs >= 2"};
  all = all && repro.pass;
  std::cout << (repro.pass ? "PASS" : "FAIL") << " criterion 6 (reproducibility over " << runs
            << " deterministic runs): " << repro.detail << "\n";
  std::cout << "total " << static_cast<long>(seconds_since(t0)) << " s\n";
  return all ? 0 : 1;
}
