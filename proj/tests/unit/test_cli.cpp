#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "somforge/commands.hpp"
#include "somforge/error.hpp"
#include "somforge/somt.hpp"

using namespace somforge;
using experiment::Config;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("somforge_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string read_text(const fs::path& p) { return somt::read_file(p); }

int run(const std::string& args) {
  const std::string cmd = std::string(SOMFORGE_BIN) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// A tiny 16x16 experiment that trains in well under a second.
const char* kTiny = R"(
[dataset]
count = 60
size = 16
seed = 3
[train]
fade_images = 64
stabilize_images = 64
batch = 8
latent_dim = 8
c0 = 2
c_max = 8
loss = logistic_ns
[task]
roi_size = 8
[eval]
n_pairs = 20
synth_count = 30
)";

}  // namespace

TEST_CASE("config defaults and canonical text round trip") {
  const Config def;
  CHECK(def.dataset.count == 2000);
  CHECK(def.dataset.lumpy.n == 32);
  CHECK(def.train.schedule.size() == 4);
  CHECK(def.task.signal_count == 2);
  CHECK(def.task.signals[1].dx == 3.0);
  CHECK(def.eval.n_pairs == 500);
  CHECK(Config::parse("").to_text() == def.to_text());
  CHECK(Config::parse(def.to_text()).to_text() == def.to_text());

  const Config tiny = Config::parse(kTiny);
  CHECK(tiny.dataset.lumpy.n == 16);
  CHECK(tiny.train.schedule.size() == 3);
  CHECK(tiny.train.schedule[1].fade_images == 64);
  CHECK(tiny.train.loss == proagan::LossVariant::logistic_ns);
  CHECK(Config::parse(tiny.to_text()).to_text() == tiny.to_text());
}

TEST_CASE("config syntax") {
  const Config c = Config::parse("# comment\n[train]\n  lr = 0.002   # trailing\nbatch = 4, 8\n\n[eval]\n"
                                 "white_noise_control = no\n");
  CHECK(c.train.adam.lr == 0.002);
  CHECK(c.train.batch == std::vector<std::size_t>{4, 8});
  CHECK_FALSE(c.eval.white_noise_control);

  auto fails_with = [](const std::string& text, const std::string& fragment) {
    try {
      Config::parse(text, "exp.conf");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      INFO(msg);
      CHECK(msg.find(fragment) != std::string::npos);
      return;
    }
    FAIL("no ConfigError for: " << text);
  };
  fails_with("[train]\nlearning_rate = 1\n", "exp.conf:2: unknown key 'train.learning_rate'");
  fails_with("[model]\n", "unknown section");
  fails_with("lr = 1\n", "outside of any section");
  fails_with("[train]\nlr = 1\nlr = 2\n", "duplicate key");
  fails_with("[train]\nlr = fast\n", "invalid number");
  fails_with("[train]\nlr\n", "expected key = value");
  fails_with("[train]\nminibatch_stddev = maybe\n", "invalid boolean");
  fails_with("[train]\nloss = hinge\n", "exp.conf");
  fails_with("[dataset]\nsize = 48\n", "size 48");
  fails_with("[dataset]\nsize = 2\n", "not 4 * 2^level");
  fails_with("[task]\nsignals = 3\n", "signals");
  fails_with("[task]\nroi_size = 40\n", "roi_size");
  fails_with("[task]\ns1_amplitude = 0\n", "amplitude");
  fails_with("[train]\nlr = -1\n", "Adam");

  CHECK_THROWS_WITH_AS(Config::load("/nonexistent/x.conf"), doctest::Contains("/nonexistent/x.conf"), ConfigError);
}

TEST_CASE("commands: data, training, sampling and evaluation") {
  const fs::path dir = scratch_dir("commands");
  const Config cfg = Config::parse(kTiny);
  std::ostringstream log;

  const objects::Dataset d = commands::gen_data(cfg, dir / "data.somt", log);
  CHECK(d.count() == 60);
  CHECK(log.str().find("count=60 resolution=16x16 sigma_k=0.1 seed=3") != std::string::npos);

  const trainer::TrainResult tr = commands::train(cfg, dir / "data.somt", dir / "train", std::nullopt, log);
  CHECK(tr.progress.finished);
  CHECK(read_text(dir / "train" / "config.txt") == cfg.to_text());
  for (const char* g : {"growth_4x4.pgm", "growth_8x8.pgm", "growth_16x16.pgm"})
    CHECK(fs::exists(dir / "train" / "growth" / g));

  Config wrong = cfg;
  wrong.dataset.lumpy.n = 32;
  wrong.finalize();
  CHECK_THROWS_AS(commands::train(wrong, dir / "data.somt", dir / "wrong", std::nullopt, log), ConfigError);

  const Tensor s = commands::sample(tr.final_checkpoint, 25, 9, dir / "samples.somt", log);
  CHECK(s.shape() == Shape{25, 1, 16, 16});
  CHECK(read_text(dir / "samples.pgm").rfind("P5\n80 80\n255\n", 0) == 0);
  CHECK(read_text(dir / "samples.pgm.txt").find("count=25\nseed=9") != std::string::npos);
  commands::sample(tr.final_checkpoint, 25, 9, dir / "again.somt", log);
  CHECK(read_text(dir / "samples.somt") == read_text(dir / "again.somt"));
  commands::sample(tr.final_checkpoint, 7, 9, dir / "seven.somt", log);
  CHECK(read_text(dir / "seven.pgm").rfind("P5\n48 48\n", 0) == 0);
  CHECK(commands::load_images(dir / "samples.somt").bit_equal(s));

  // Self-comparison is exact; the white-noise control is reported per signal.
  const auto self = commands::eval_ho(cfg, dir / "data.somt", dir / "data.somt", dir / "self", log);
  REQUIRE(self.signals.size() == 2);
  for (const auto& so : self.signals) {
    CHECK(so.comparison.delta_auc == 0.0);
    CHECK(so.pass);
    CHECK(so.control.has_value());
  }
  for (const char* f : {"report_s1.json", "report_s2.json", "roc_s1_real.csv", "roc_s2_synth.csv", "template_s1.somt",
                        "template_s2_real.pgm", "signal_s1.pgm", "control_s1.json", "summary.json", "config.txt"})
    CHECK(fs::exists(dir / "self" / f));
  const auto report = nlohmann::json::parse(read_text(dir / "self" / "report_s2.json"));
  CHECK(report["config"]["experiment"]["task.s2_dx"] == "3");
  CHECK(report["config"]["n_pairs"] == 20);
  const auto tmpl = somt::load_tensors(dir / "self" / "template_s1.somt");
  CHECK(somt::find(tmpl, "w_real").shape() == Shape{8, 8});

  const auto synth = commands::eval_ho(cfg, dir / "data.somt", dir / "samples.somt", dir / "synth", log);
  CHECK(synth.signals[0].comparison.n_cov_synth == 25);
  CHECK_THROWS_AS(commands::load_images(dir / "self" / "template_s1.somt"), FormatError);
}

TEST_CASE("command-line exit codes") {
  const fs::path dir = scratch_dir("exit");
  write_text(dir / "tiny.conf", kTiny);
  const std::string conf = " --config " + (dir / "tiny.conf").string();

  CHECK(run("self-test") == 0);
  CHECK(run("self-test --inject-dft-scale 1.01") == 5);
  CHECK(run("gen-data --config " + (dir / "missing.conf").string() + " --out x.somt") == 2);
  write_text(dir / "bad.conf", "[train]\nbogus = 1\n");
  CHECK(run("gen-data --config " + (dir / "bad.conf").string() + " --out x.somt") == 2);
  CHECK(run("frobnicate") == 2);

  CHECK(run("--deterministic gen-data" + conf + " --out " + (dir / "data.somt").string()) == 0);
  CHECK(run("gen-data" + conf + " --out /proc/forbidden/data.somt") == 3);
  CHECK(run("train" + conf + " --data " + (dir / "absent.somt").string() + " --out " + (dir / "t").string()) == 3);

  CHECK(run("--deterministic train" + conf + " --data " + (dir / "data.somt").string() + " --out " +
            (dir / "a").string()) == 0);
  CHECK(run("--deterministic train" + conf + " --data " + (dir / "data.somt").string() + " --out " +
            (dir / "b").string()) == 0);
  CHECK(read_text(dir / "a" / "train_log.csv") == read_text(dir / "b" / "train_log.csv"));
  CHECK(read_text(dir / "a" / "final.somt") == read_text(dir / "b" / "final.somt"));

  std::string nan_conf = kTiny;
  nan_conf.replace(nan_conf.find("loss = logistic_ns"), 18, "loss = logistic_ns\nlr = 1e30");
  write_text(dir / "nan.conf", nan_conf);
  CHECK(run("train --config " + (dir / "nan.conf").string() + " --data " + (dir / "data.somt").string() + " --out " +
            (dir / "nan").string()) == 4);
  CHECK(fs::exists(dir / "nan" / "checkpoints" / "failure.somt"));

  const std::string ckpt = (dir / "a" / "final.somt").string();
  CHECK(run("sample --ckpt " + ckpt + " --count 25 --seed 4 --out " + (dir / "s.somt").string()) == 0);
  write_text(dir / "nocontrol.conf", std::string(kTiny) + "[eval]\nwhite_noise_control = false\n");
  write_text(dir / "strict.conf", std::string(kTiny) + "[eval]\nmin_template_cosine = 1.5\n");
  const std::string data = " --real " + (dir / "data.somt").string() + " --synth " + (dir / "data.somt").string();
  CHECK(run("eval-ho --config " + (dir / "nocontrol.conf").string() + data + " --out " + (dir / "e").string() +
            " --check") == 0);
  CHECK(run("eval-ho --config " + (dir / "strict.conf").string() + data + " --out " + (dir / "e").string() +
            " --check") == 5);
  // Default config expects 32x32 images.
  CHECK(run("eval-ho" + data + " --out " + (dir / "e").string()) == 5);
  CHECK(run("eval-ho" + conf + " --real " + ckpt + " --synth " + ckpt + " --out " + (dir / "e").string()) == 3);
}
