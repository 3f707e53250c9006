#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "somforge/parallel.hpp"
#include "somforge/trainer.hpp"

using namespace somforge;
using namespace somforge::trainer;
namespace fs = std::filesystem;

namespace {

fs::path root() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "somforge_test_trainer";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

const fs::path& dataset_path() {
  static const fs::path path = [] {
    objects::DatasetSpec spec;
    spec.lumpy = objects::LumpyParams{6.0, 1.0, 1.5, 16};
    spec.count = 48;
    spec.seed = 3;
    auto p = root() / "data16.somt";
    objects::gen_dataset(spec, p);
    return p;
  }();
  return path;
}

TrainConfig tiny(const std::string& out, proagan::LossVariant loss = proagan::LossVariant::logistic_ns) {
  TrainConfig c;
  c.schedule = progressive_schedule(2, 24, 16);
  c.batch = {8, 8, 4};
  c.loss = loss;
  c.latent_dim = 8;
  c.c0 = 2;
  c.c_max = 8;
  c.seed = 17;
  c.dataset = dataset_path();
  c.output_dir = root() / out;
  return c;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  return out;
}

std::string bytes(const fs::path& p) { return somt::read_file(p); }

struct Deterministic {
  Deterministic() { parallel::set_deterministic(true); }
  ~Deterministic() { parallel::set_deterministic(false); }
};

}  // namespace

TEST_CASE("alpha follows images shown within a fade") {
  Phase p{1, 100, 50};
  CHECK(alpha_at(p, 0) == 0.0);
  CHECK(alpha_at(p, 25) == 0.25);
  CHECK(alpha_at(p, 100) == 1.0);
  CHECK(alpha_at(p, 140) == 1.0);
  CHECK(alpha_at(Phase{0, 0, 10}, 0) == 1.0);
}

TEST_CASE("schedule validation") {
  CHECK_NOTHROW(validate_schedule(progressive_schedule(3, 10, 10)));
  CHECK_THROWS_AS(validate_schedule({{0, 0, 10}, {2, 10, 10}}), ConfigError);
  CHECK_THROWS_AS(validate_schedule({{0, 5, 10}}), ConfigError);
  CHECK_THROWS_AS(validate_schedule({}), ConfigError);
  TrainConfig c = tiny("bad_levels");
  c.schedule = progressive_schedule(3, 8, 8);
  CHECK_THROWS_AS(train(c), ConfigError);
}

TEST_CASE("training runs the schedule with exact image accounting") {
  Deterministic det;
  TrainConfig c = tiny("run_a");
  TrainResult r = train(c);
  CHECK(r.progress.finished);
  CHECK(r.phase_checkpoints.size() == 3);
  std::uint64_t budget = 0;
  for (const auto& p : c.schedule) budget += p.fade_images + p.stabilize_images;
  CHECK(r.progress.images_total == budget);

  auto log = lines(c.output_dir / "train_log.csv");
  REQUIRE(log.size() > 1);
  CHECK(log[0] == kLogHeader);
  CHECK(split(log.back())[5] == std::to_string(budget));
  CHECK(log.size() - 1 == r.progress.step);

  // Alpha within each fade equals images shown in the fade / fade budget.
  std::uint64_t prev_images = 0;
  std::size_t prev_level = 0;
  std::uint64_t phase_start = 0;
  for (std::size_t i = 1; i < log.size(); ++i) {
    auto f = split(log[i]);
    const std::size_t level = std::stoul(f[1]);
    if (level != prev_level) phase_start = prev_images;
    const double alpha = std::stod(f[2]);
    const Phase& ph = c.schedule[level];
    CHECK(alpha == doctest::Approx(alpha_at(ph, prev_images - phase_start)).epsilon(1e-15));
    CHECK(std::isfinite(std::stod(f[3])));
    CHECK(std::isfinite(std::stod(f[4])));
    CHECK(std::stod(f[6]) == 0.0);
    prev_images = std::stoull(f[5]);
    prev_level = level;
  }

  Checkpoint ck = load_checkpoint(r.final_checkpoint);
  CHECK(ck.nets.level == 2);
  Tensor s = sample(ck, 5, 1);
  CHECK(s.shape() == Shape{5, 1, 16, 16});
}

TEST_CASE("deterministic runs are byte-identical and resume is exact") {
  Deterministic det;
  TrainConfig a = tiny("det_a"), b = tiny("det_b");
  TrainResult ra = train(a);
  train(b);
  CHECK(bytes(a.output_dir / "train_log.csv") == bytes(b.output_dir / "train_log.csv"));
  CHECK(bytes(ra.final_checkpoint) == bytes(b.output_dir / "final.somt"));

  TrainConfig c = tiny("det_resume");
  fs::create_directories(c.output_dir);
  const fs::path boundary = ra.phase_checkpoints[0];
  TrainResult rc = train(c, boundary);
  CHECK(bytes(rc.final_checkpoint) == bytes(ra.final_checkpoint));
  const auto full = lines(a.output_dir / "train_log.csv");
  const auto resumed = lines(c.output_dir / "train_log.csv");
  const Checkpoint ck = load_checkpoint(boundary);
  REQUIRE(resumed.size() == full.size() - ck.progress.step);
  for (std::size_t i = 1; i < resumed.size(); ++i) CHECK(resumed[i] == full[i + ck.progress.step]);

  // Resuming inside the original directory reproduces the whole log.
  train(a, boundary);
  CHECK(lines(a.output_dir / "train_log.csv") == full);

  TrainConfig other = tiny("det_other");
  other.seed = 99;
  CHECK_THROWS_AS(train(other, boundary), ConfigError);
}

TEST_CASE("checkpoint round trip is byte-identical") {
  Deterministic det;
  TrainConfig c = tiny("ck_rt");
  c.max_steps = 3;
  c.checkpoint_interval = 2;
  TrainResult r = train(c);
  CHECK_FALSE(r.progress.finished);
  CHECK(r.progress.step == 3);
  CHECK(fs::exists(c.output_dir / "checkpoints" / "latest.somt"));
  const fs::path copy = c.output_dir / "copy.somt";
  save_checkpoint(load_checkpoint(r.final_checkpoint), copy);
  CHECK(bytes(copy) == bytes(r.final_checkpoint));

  std::string corrupt = bytes(r.final_checkpoint);
  corrupt[0] = 'X';
  somt::write_file_atomic(c.output_dir / "corrupt.somt", corrupt);
  CHECK_THROWS_AS(load_checkpoint(c.output_dir / "corrupt.somt"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dataset_path()), FormatError);
}

TEST_CASE("wgan_clip keeps discriminator weights clipped") {
  Deterministic det;
  TrainConfig c = tiny("wgan", proagan::LossVariant::wgan_clip);
  c.schedule = progressive_schedule(1, 16, 16);
  TrainResult r = train(c);
  CHECK(c.resolved_d_steps() == 5);
  Checkpoint ck = load_checkpoint(r.final_checkpoint);
  for (const auto& [name, t] : ck.nets.disc)
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(std::abs(t.at(i)) <= c.clip);
}

TEST_CASE("non-finite losses abort with a failure checkpoint") {
  Deterministic det;
  TrainConfig c = tiny("nan");
  c.adam.lr = 1e30;
  CHECK_THROWS_AS(train(c), NumericError);
  CHECK(fs::exists(c.output_dir / "checkpoints" / "failure.somt"));
  CHECK_NOTHROW(load_checkpoint(c.output_dir / "checkpoints" / "failure.somt"));
}

TEST_CASE("sampling and growth snapshots") {
  Deterministic det;
  TrainConfig c = tiny("snap");
  TrainResult r = train(c);
  Checkpoint ck = load_checkpoint(r.final_checkpoint);
  Tensor a = sample(ck, 70, 5), b = sample(ck, 70, 5), other = sample(ck, 70, 6);
  CHECK(a.bit_equal(b));
  CHECK_FALSE(a.bit_equal(other));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(a.at(i) >= ck.nets.arch.out_lo);
    CHECK(a.at(i) <= ck.nets.arch.out_hi);
  }

  auto files = snapshot_growth(r.phase_checkpoints, c.output_dir / "growth", 2, 4, 3);
  REQUIRE(files.size() == 3);
  const std::size_t res[] = {4, 8, 16};
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(files[i].filename() == "growth_" + std::to_string(res[i]) + "x" + std::to_string(res[i]) + ".pgm");
    const std::string pgm = bytes(files[i]);
    const std::string header = "P5\n" + std::to_string(4 * res[i]) + " " + std::to_string(3 * res[i]) + "\n255\n";
    CHECK(pgm.substr(0, header.size()) == header);
    CHECK(pgm.size() == header.size() + 12 * res[i] * res[i]);
    CHECK(fs::exists(files[i].string() + ".txt"));
  }
  const std::string first = bytes(files[2]);
  snapshot_growth(r.phase_checkpoints, c.output_dir / "growth", 2, 4, 3);
  CHECK(bytes(files[2]) == first);
}
