#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "somforge/objects.hpp"
#include "somforge/observer.hpp"
#include "somforge/trainer.hpp"

namespace somforge::experiment {

struct TaskConfig {
  /// Signals s1 and s2; the first `signal_count` are evaluated.
  std::vector<observer::BlobSignal> signals = {{0.5, 1.5, 0.0, 0.0}, {0.6, 2.0, 3.0, 0.0}};
  std::size_t signal_count = 2;
  std::size_t roi_size = 16;
  /// Standard deviation of the i.i.d. detection-task noise.
  double noise_sigma = 0.5;
};

struct EvalConfig {
  std::size_t n_pairs = 500;
  std::uint64_t seed = 1;
  /// Synthetic images drawn from the checkpoint for the comparison.
  std::size_t synth_count = 2000;
  std::uint64_t sample_seed = 1;
  bool white_noise_control = true;
  double max_delta_auc = 0.05;
  double min_template_cosine = 0.8;
};

/// Flat key=value configuration with [dataset], [train], [task] and [eval]
/// sections. Omitted keys keep their defaults; unknown keys are errors.
struct Config {
  objects::DatasetSpec dataset;
  trainer::TrainConfig train;
  std::uint64_t fade_images = 200000;
  std::uint64_t stabilize_images = 200000;
  TaskConfig task;
  EvalConfig eval;

  Config();

  /// Throws ConfigError naming `source` and the line on any problem.
  static Config parse(std::string_view text, const std::string& source = "<config>");
  /// Throws ConfigError (naming the path) when the file cannot be read.
  static Config load(const std::filesystem::path& path);

  /// Resolves derived fields (schedule from the image budgets and resolution)
  /// and validates every section.
  void finalize();
  /// Canonical text listing every key; parse(to_text()) reproduces the config.
  std::string to_text() const;
};

}  // namespace somforge::experiment
