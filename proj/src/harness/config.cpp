#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

#include "rhythm/error.hpp"
#include "rhythm/harness.hpp"

namespace rhythm::harness {
namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seeds share the size_t field kind");
using Field = std::variant<double*, std::size_t*, bool*>;

// Canonical key order; also the text layout.
std::vector<std::pair<std::string, Field>> fields(RunConfig& c) {
  return {
      {"model.depth", &c.model.depth},
      {"model.channels", &c.model.channels},
      {"model.expansion", &c.model.expansion},
      {"model.state_size", &c.model.state_size},
      {"model.input_hw", &c.model.input_hw},
      {"model.frames_per_segment", &c.model.frames_per_segment},
      {"train.lr", &c.train.lr},
      {"train.beta1", &c.train.beta1},
      {"train.beta2", &c.train.beta2},
      {"train.adam_eps", &c.train.adam_eps},
      {"train.weight_decay", &c.train.weight_decay},
      {"train.epochs", &c.train.epochs},
      {"train.batch_size", &c.train.batch_size},
      {"train.seed", &c.train.seed},
      {"train.loss_a", &c.train.loss_a},
      {"train.loss_b", &c.train.loss_b},
      {"train.augment", &c.train.augment},
      {"synth.n_train", &c.synth.n_train},
      {"synth.n_test", &c.synth.n_test},
      {"synth.seed", &c.synth.seed},
      {"synth.frames", &c.synth.frames},
      {"synth.fs", &c.synth.fs},
      {"synth.hr_min", &c.synth.hr_min},
      {"synth.hr_max", &c.synth.hr_max},
      {"synth.jitter", &c.synth.jitter},
      {"synth.pulse_noise", &c.synth.pulse_noise},
      {"synth.modulation", &c.synth.modulation},
      {"synth.noise", &c.synth.noise},
      {"synth.drift", &c.synth.drift},
      {"synth.motion", &c.synth.motion},
      {"bench.min_log2", &c.bench.min_log2},
      {"bench.max_log2", &c.bench.max_log2},
      {"bench.repeats", &c.bench.repeats},
      {"bench.state", &c.bench.state},
      {"bench.kernel_max", &c.bench.kernel_max},
      {"bench.workers", &c.bench.workers},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config: '" + key + "' expects " + expected + ", got '" + value + "'");
}

template <typename T>
T parse_unsigned(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size() || value.front() == '-') bad_value(key, value, "a non-negative integer");
  return static_cast<T>(v);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size()) bad_value(key, value, "a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "true or false");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

synth::DatasetSpec SynthConfig::dataset(std::size_t hw) const {
  synth::DatasetSpec d;
  d.n_train = n_train;
  d.n_test = n_test;
  d.seed = seed;
  d.hr_min = hr_min;
  d.hr_max = hr_max;
  d.pulse.fs = fs;
  d.pulse.duration_s = double(frames) / fs;
  d.pulse.hr_jitter_pct = jitter;
  d.pulse.noise_std = pulse_noise;
  d.scene.hw = hw;
  d.scene.modulation_depth = modulation;
  d.scene.sensor_noise_std = noise;
  d.scene.illumination_drift = drift;
  d.scene.motion_amplitude_px = motion;
  return d;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (auto& [name, field] : fields(*this)) {
    if (name != key) continue;
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, double>) *p = parse_double(key, value);
          else if constexpr (std::is_same_v<T, bool>) *p = parse_bool(key, value);
          else *p = parse_unsigned<T>(key, value);
        },
        field);
    return;
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

void RunConfig::validate() const {
  model.validate();
  if (!(train.lr >= 0.0)) throw ConfigError("config: train.lr must be non-negative");
  if (!(train.beta1 >= 0.0 && train.beta1 < 1.0) || !(train.beta2 >= 0.0 && train.beta2 < 1.0)) {
    throw ConfigError("config: train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!(train.adam_eps > 0.0)) throw ConfigError("config: train.adam_eps must be positive");
  if (!(train.weight_decay >= 0.0)) throw ConfigError("config: train.weight_decay must be non-negative");
  if (train.batch_size < 1) throw ConfigError("config: train.batch_size must be at least 1");
  if (!(train.loss_a >= 0.0) || !(train.loss_b >= 0.0)) throw ConfigError("config: loss weights must be non-negative");
  if (model.frames_per_segment % 4 != 0) throw ConfigError("config: model.frames_per_segment must be divisible by 4");
  if (synth.frames < 5) throw ConfigError("config: synth.frames must be at least 5");
  if (!(synth.fs > 0.0)) throw ConfigError("config: synth.fs must be positive");
  if (bench.min_log2 > bench.max_log2 || bench.max_log2 > 24) {
    throw ConfigError("config: bench.min_log2 <= bench.max_log2 <= 24 required");
  }
  if (bench.repeats < 1 || bench.state < 1 || bench.workers < 1) {
    throw ConfigError("config: bench.repeats, bench.state and bench.workers must be at least 1");
  }
  synth.dataset(model.input_hw).scene.validate();
}

std::string RunConfig::to_text() const {
  RunConfig copy = *this;
  std::ostringstream out;
  for (const auto& [name, field] : fields(copy)) {
    out << name << " = ";
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, double>) out << format_double(*p);
          else if constexpr (std::is_same_v<T, bool>) out << (*p ? "true" : "false");
          else out << *p;
        },
        field);
    out << '\n';
  }
  return out.str();
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    cfg = from_text(text.str());
  }
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& cfg) { return fnv1a_hex(cfg.to_text()); }

std::pair<std::string, std::string> parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + text + "' is not key=value");
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

}  // namespace rhythm::harness
