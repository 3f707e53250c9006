#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "somforge/adam.hpp"
#include "somforge/objects.hpp"
#include "somforge/proagan.hpp"

namespace somforge::trainer {

struct Phase {
  std::size_t level = 0;
  std::uint64_t fade_images = 0;
  std::uint64_t stabilize_images = 0;
};

/// Levels 0..max_level; the first phase has no fade.
std::vector<Phase> progressive_schedule(std::size_t max_level, std::uint64_t fade_images,
                                        std::uint64_t stabilize_images);
void validate_schedule(const std::vector<Phase>& schedule);

struct TrainConfig {
  std::vector<Phase> schedule = progressive_schedule(3, 200000, 200000);
  /// Batch size per level; the last entry repeats for higher levels.
  std::vector<std::size_t> batch = {64, 64, 64, 32};
  /// Discriminator updates per generator update; 0 selects 5 for wgan_clip
  /// and 1 for logistic_ns.
  std::size_t d_steps = 0;
  proagan::LossVariant loss = proagan::LossVariant::wgan_clip;
  AdamConfig adam;
  double clip = 0.01;
  std::uint64_t seed = 1;
  /// Extra checkpoint every this many steps; 0 keeps only phase-boundary ones.
  std::uint64_t checkpoint_interval = 0;
  /// Stop after this many steps (0 runs the whole schedule).
  std::uint64_t max_steps = 0;
  std::size_t latent_dim = 64;
  std::size_t c0 = 16;
  std::size_t c_max = 128;
  bool minibatch_stddev = false;
  bool equalized_lr = false;
  std::filesystem::path dataset;
  std::filesystem::path output_dir;

  std::size_t batch_for(std::size_t level) const;
  std::size_t resolved_d_steps() const;
  void validate() const;
  /// Canonical key=value text of every setting that affects the trajectory.
  std::string fingerprint() const;
};

/// Position in the schedule. `images_in_phase` counts real images consumed
/// by discriminator updates in the current phase.
struct Progress {
  std::size_t phase = 0;
  std::uint64_t images_in_phase = 0;
  std::uint64_t images_total = 0;
  std::uint64_t step = 0;
  bool finished = false;
};

double alpha_at(const Phase& phase, std::uint64_t images_in_phase);

struct Checkpoint {
  std::string fingerprint;
  Progress progress;
  proagan::Nets nets;
  AdamState adam_g;
  AdamState adam_d;
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
/// Throws FormatError/IoError for corrupt or missing files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct LogRecord {
  std::uint64_t step = 0;
  std::size_t level = 0;
  double alpha = 0;
  double loss_d = 0;
  double loss_g = 0;
  std::uint64_t images_shown = 0;
  double seconds = 0;
};

inline constexpr const char* kLogHeader = "step,level,alpha,loss_d,loss_g,images_shown,seconds";
std::string format_record(const LogRecord& r);

struct TrainResult {
  Progress progress;
  std::filesystem::path final_checkpoint;
  std::vector<std::filesystem::path> phase_checkpoints;
};

/// Runs (or resumes) the schedule. Writes <out>/train_log.csv, phase-boundary
/// checkpoints <out>/checkpoints/phase<p>_level<l>.somt, optional interval
/// checkpoints <out>/checkpoints/latest.somt and <out>/final.somt. A
/// non-finite loss or gradient writes <out>/checkpoints/failure.somt and throws
/// NumericError.
TrainResult train(const TrainConfig& config, const std::optional<std::filesystem::path>& resume_from = std::nullopt);

/// `count` images [count,1,r,r] at the checkpoint's level with alpha = 1.
Tensor sample(const Checkpoint& ck, std::size_t count, std::uint64_t seed);

/// One PGM grid (cols x rows tiles) per checkpoint, named growth_<r>x<r>.pgm.
std::vector<std::filesystem::path> snapshot_growth(const std::vector<std::filesystem::path>& checkpoints,
                                                   const std::filesystem::path& out_dir, std::uint64_t seed,
                                                   std::size_t cols = 8, std::size_t rows = 8);

}  // namespace somforge::trainer
