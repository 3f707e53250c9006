#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "somforge/experiment.hpp"

namespace somforge::commands {

/// Generates the dataset described by the [dataset] section and prints a
/// one-line summary.
objects::Dataset gen_data(const experiment::Config& cfg, const std::filesystem::path& out, std::ostream& log);

/// Trains on `data` into `out`: <out>/config.txt echoes the resolved config,
/// <out>/growth/ holds one snapshot grid per completed phase.
trainer::TrainResult train(const experiment::Config& cfg, const std::filesystem::path& data,
                           const std::filesystem::path& out,
                           const std::optional<std::filesystem::path>& resume, std::ostream& log);

/// Writes `out` (SOMT: "samples" [count,1,r,r] and "provenance") and a PGM
/// grid next to it with ceil(sqrt(count)) columns.
Tensor sample(const std::filesystem::path& checkpoint, std::size_t count, std::uint64_t seed,
              const std::filesystem::path& out, std::ostream& log);

/// Images of a dataset ("objects") or samples ("samples") SOMT file.
Tensor load_images(const std::filesystem::path& path);

struct SignalOutcome {
  observer::Comparison comparison;
  bool pass = false;
  std::optional<observer::Comparison> control;
  /// True when the control breaks at least one threshold.
  bool control_fails = false;
};

struct EvalOutcome {
  std::vector<SignalOutcome> signals;
  /// Every signal passes and every control fails.
  bool reproduced = false;
};

/// Per signal k: report_s<k>.json, roc_s<k>_{real,synth}.csv,
/// template_s<k>.somt and PGM rasters of both templates and the signal; with
/// the white-noise control also control_s<k>.json. summary.json collects the
/// verdicts.
EvalOutcome eval_ho(const experiment::Config& cfg, const std::filesystem::path& real,
                    const std::filesystem::path& synth, const std::filesystem::path& out, std::ostream& log);

}  // namespace somforge::commands
