#include "somforge/experiment.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "somforge/error.hpp"
#include "somforge/somt.hpp"

namespace somforge::experiment {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError("invalid number '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("invalid boolean '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_number<std::size_t>(trim(item)));
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

struct Key {
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

// Field accessors keyed by "section.key", in canonical output order.
const std::vector<std::pair<std::string, Key>>& keys() {
  static const auto table = [] {
    std::vector<std::pair<std::string, Key>> t;
    auto u64 = [&](std::string name, std::function<std::uint64_t&(Config&)> ref) {
      t.push_back({std::move(name),
                   {[ref](Config& c, const std::string& v) { ref(c) = parse_number<std::uint64_t>(v); },
                    [ref](const Config& c) { return std::to_string(ref(const_cast<Config&>(c))); }}});
    };
    auto size = [&](std::string name, std::function<std::size_t&(Config&)> ref) {
      t.push_back({std::move(name),
                   {[ref](Config& c, const std::string& v) { ref(c) = parse_number<std::size_t>(v); },
                    [ref](const Config& c) { return std::to_string(ref(const_cast<Config&>(c))); }}});
    };
    auto real = [&](std::string name, std::function<double&(Config&)> ref) {
      t.push_back({std::move(name),
                   {[ref](Config& c, const std::string& v) { ref(c) = parse_number<double>(v); },
                    [ref](const Config& c) { return fmt(ref(const_cast<Config&>(c))); }}});
    };
    auto flag = [&](std::string name, std::function<bool&(Config&)> ref) {
      t.push_back({std::move(name),
                   {[ref](Config& c, const std::string& v) { ref(c) = parse_bool(v); },
                    [ref](const Config& c) { return std::string(ref(const_cast<Config&>(c)) ? "true" : "false"); }}});
    };

    size("dataset.count", [](Config& c) -> std::size_t& { return c.dataset.count; });
    size("dataset.size", [](Config& c) -> std::size_t& { return c.dataset.lumpy.n; });
    real("dataset.nbar", [](Config& c) -> double& { return c.dataset.lumpy.nbar; });
    real("dataset.amplitude", [](Config& c) -> double& { return c.dataset.lumpy.amplitude; });
    real("dataset.width", [](Config& c) -> double& { return c.dataset.lumpy.width; });
    real("dataset.sigma_k", [](Config& c) -> double& { return c.dataset.noise.sigma_k; });
    u64("dataset.seed", [](Config& c) -> std::uint64_t& { return c.dataset.seed; });

    u64("train.fade_images", [](Config& c) -> std::uint64_t& { return c.fade_images; });
    u64("train.stabilize_images", [](Config& c) -> std::uint64_t& { return c.stabilize_images; });
    t.push_back({"train.batch",
                 {[](Config& c, const std::string& v) { c.train.batch = parse_list(v); },
                  [](const Config& c) {
                    std::string s;
                    for (std::size_t i = 0; i < c.train.batch.size(); ++i)
                      s += (i ? "," : "") + std::to_string(c.train.batch[i]);
                    return s;
                  }}});
    size("train.d_steps", [](Config& c) -> std::size_t& { return c.train.d_steps; });
    t.push_back({"train.loss",
                 {[](Config& c, const std::string& v) { c.train.loss = proagan::parse_loss(v); },
                  [](const Config& c) { return std::string(proagan::to_string(c.train.loss)); }}});
    real("train.lr", [](Config& c) -> double& { return c.train.adam.lr; });
    real("train.beta1", [](Config& c) -> double& { return c.train.adam.beta1; });
    real("train.beta2", [](Config& c) -> double& { return c.train.adam.beta2; });
    real("train.epsilon", [](Config& c) -> double& { return c.train.adam.epsilon; });
    real("train.clip", [](Config& c) -> double& { return c.train.clip; });
    u64("train.seed", [](Config& c) -> std::uint64_t& { return c.train.seed; });
    u64("train.checkpoint_interval", [](Config& c) -> std::uint64_t& { return c.train.checkpoint_interval; });
    u64("train.max_steps", [](Config& c) -> std::uint64_t& { return c.train.max_steps; });
    size("train.latent_dim", [](Config& c) -> std::size_t& { return c.train.latent_dim; });
    size("train.c0", [](Config& c) -> std::size_t& { return c.train.c0; });
    size("train.c_max", [](Config& c) -> std::size_t& { return c.train.c_max; });
    flag("train.minibatch_stddev", [](Config& c) -> bool& { return c.train.minibatch_stddev; });
    flag("train.equalized_lr", [](Config& c) -> bool& { return c.train.equalized_lr; });

    size("task.signals", [](Config& c) -> std::size_t& { return c.task.signal_count; });
    for (std::size_t k = 0; k < 2; ++k) {
      const std::string p = "task.s" + std::to_string(k + 1) + "_";
      real(p + "amplitude", [k](Config& c) -> double& { return c.task.signals[k].amplitude; });
      real(p + "width", [k](Config& c) -> double& { return c.task.signals[k].width; });
      real(p + "dx", [k](Config& c) -> double& { return c.task.signals[k].dx; });
      real(p + "dy", [k](Config& c) -> double& { return c.task.signals[k].dy; });
    }
    size("task.roi_size", [](Config& c) -> std::size_t& { return c.task.roi_size; });
    real("task.noise_sigma", [](Config& c) -> double& { return c.task.noise_sigma; });

    size("eval.n_pairs", [](Config& c) -> std::size_t& { return c.eval.n_pairs; });
    u64("eval.seed", [](Config& c) -> std::uint64_t& { return c.eval.seed; });
    size("eval.synth_count", [](Config& c) -> std::size_t& { return c.eval.synth_count; });
    u64("eval.sample_seed", [](Config& c) -> std::uint64_t& { return c.eval.sample_seed; });
    flag("eval.white_noise_control", [](Config& c) -> bool& { return c.eval.white_noise_control; });
    real("eval.max_delta_auc", [](Config& c) -> double& { return c.eval.max_delta_auc; });
    real("eval.min_template_cosine", [](Config& c) -> double& { return c.eval.min_template_cosine; });
    return t;
  }();
  return table;
}

const Key* find_key(const std::string& full) {
  for (const auto& [name, key] : keys())
    if (name == full) return &key;
  return nullptr;
}

}  // namespace

Config::Config() { finalize(); }

Config Config::parse(std::string_view text, const std::string& source) {
  Config c;
  const std::set<std::string> sections = {"dataset", "train", "task", "eval"};
  std::string section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (!sections.contains(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value, got '" + line + "'");
    if (section.empty()) throw ConfigError(where + "key outside of any section");
    const std::string full = section + "." + trim(line.substr(0, eq));
    const Key* key = find_key(full);
    if (key == nullptr) throw ConfigError(where + "unknown key '" + full + "'");
    if (!seen.insert(full).second) throw ConfigError(where + "duplicate key '" + full + "'");
    try {
      key->set(c, trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw ConfigError(where + full + ": " + e.what());
    }
  }
  try {
    c.finalize();
  } catch (const Error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = somt::read_file(path);
  } catch (const Error& e) {
    throw ConfigError("cannot read config file " + path.string() + ": " + e.what());
  }
  return parse(text, path.string());
}

void Config::finalize() {
  dataset.lumpy.validate();
  if (dataset.count < 1) throw ConfigError("dataset count must be at least 1");
  if (!(dataset.noise.sigma_k >= 0.0)) throw ConfigError("sigma_k must be non-negative");
  std::size_t max_level = 0;
  try {
    max_level = proagan::level_of(dataset.lumpy.n);
  } catch (const Error&) {
    throw ConfigError("dataset size " + std::to_string(dataset.lumpy.n) + " is not 4 * 2^level");
  }
  train.schedule = trainer::progressive_schedule(max_level, fade_images, stabilize_images);
  trainer::TrainConfig probe = train;
  if (probe.dataset.empty()) probe.dataset = "unset";
  if (probe.output_dir.empty()) probe.output_dir = "unset";
  probe.validate();

  if (task.signal_count < 1 || task.signal_count > task.signals.size())
    throw ConfigError("task signals must be 1 or 2");
  for (const auto& s : task.signals)
    if (!(s.width > 0.0) || s.amplitude == 0.0 || !std::isfinite(s.amplitude))
      throw ConfigError("signal width must be positive and amplitude nonzero");
  if (task.roi_size < 1 || task.roi_size > dataset.lumpy.n) throw ConfigError("roi_size must be in [1, size]");
  if (!(task.noise_sigma > 0.0)) throw ConfigError("noise_sigma must be positive");
  if (eval.n_pairs < 1) throw ConfigError("n_pairs must be at least 1");
  if (eval.synth_count < 2) throw ConfigError("synth_count must be at least 2");
}

std::string Config::to_text() const {
  std::string out, section;
  for (const auto& [name, key] : keys()) {
    const std::string sec = name.substr(0, name.find('.'));
    if (sec != section) {
      out += (section.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += name.substr(sec.size() + 1) + " = " + key.get(*this) + "\n";
  }
  return out;
}

}  // namespace somforge::experiment
