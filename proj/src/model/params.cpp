#include <cmath>
#include <random>
#include <sstream>

#include "rhythm/container.hpp"
#include "rhythm/error.hpp"
#include "rhythm/model.hpp"

namespace rhythm::model {
namespace {

class Init {
 public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = dist(rng_);
    return t;
  }
  // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  Tensor fan_in(Shape shape, std::size_t fan) { return uniform(std::move(shape), 1.0 / std::sqrt(double(fan))); }
  double log_uniform(double lo, double hi) {
    std::uniform_real_distribution<double> dist(std::log(lo), std::log(hi));
    return std::exp(dist(rng_));
  }

 private:
  std::mt19937_64 rng_;
};

void add_conv_bn(ParamSet& p, Init& init, const std::string& name, std::size_t co, std::size_t ci, std::size_t k) {
  p.tensors[name + ".w"] = init.fan_in({co, ci, k, k}, ci * k * k);
  p.tensors[name + ".gamma"] = Tensor::full({co}, 1.0);
  p.tensors[name + ".beta"] = Tensor::zeros({co});
  p.batchnorm[name] = ops::BatchNormState{Tensor::zeros({co}), Tensor::full({co}, 1.0)};
}

void add_norm(ParamSet& p, const std::string& name, std::size_t c) {
  p.tensors[name + ".gamma"] = Tensor::full({c}, 1.0);
  p.tensors[name + ".beta"] = Tensor::zeros({c});
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size() || value.front() == '-') {
    throw ConfigError("model config: '" + key + "' expects a non-negative integer, got '" + value + "'");
  }
  return static_cast<std::size_t>(v);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

void ModelConfig::validate() const {
  if (depth < 1) throw ConfigError("model config: depth must be at least 1");
  if (channels < 2 || channels % 2 != 0) throw ConfigError("model config: channels must be even and >= 2");
  if (expansion < 1) throw ConfigError("model config: expansion must be >= 1 (C_mid >= C)");
  if (state_size < 1) throw ConfigError("model config: state_size must be >= 1");
  if (input_hw < 8 || input_hw % 8 != 0) throw ConfigError("model config: input_hw must be a positive multiple of 8");
  if (frames_per_segment < 5) throw ConfigError("model config: frames_per_segment must be >= 5");
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out << "depth = " << depth << "\nchannels = " << channels << "\nexpansion = " << expansion
      << "\nstate_size = " << state_size << "\ninput_hw = " << input_hw
      << "\nframes_per_segment = " << frames_per_segment << "\n";
  return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model config: expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "depth") cfg.depth = parse_size(key, value);
    else if (key == "channels") cfg.channels = parse_size(key, value);
    else if (key == "expansion") cfg.expansion = parse_size(key, value);
    else if (key == "state_size") cfg.state_size = parse_size(key, value);
    else if (key == "input_hw") cfg.input_hw = parse_size(key, value);
    else if (key == "frames_per_segment") cfg.frames_per_segment = parse_size(key, value);
  }
  cfg.validate();
  return cfg;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Init init(seed);
  ParamSet p;
  const std::size_t C = cfg.channels, half = C / 2, Cm = cfg.c_mid(), N = cfg.state_size, Di = C;

  add_conv_bn(p, init, "stem1_raw", half, 3, 7);
  add_conv_bn(p, init, "stem1_diff", half, 12, 7);
  add_conv_bn(p, init, "stem2_fused", C, half, 7);
  add_conv_bn(p, init, "stem2_diff", C, half, 7);
  add_conv_bn(p, init, "stem3", C, C, 5);

  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const std::string m = "block" + std::to_string(b) + ".mtc.";
    p.tensors[m + "in_w"] = init.fan_in({C, Di}, C);
    p.tensors[m + "in_b"] = Tensor::zeros({Di});
    p.tensors[m + "gate_w"] = init.fan_in({C, Di}, C);
    p.tensors[m + "gate_b"] = Tensor::zeros({Di});
    p.tensors[m + "conv_w"] = init.fan_in({Di, 4}, 4);
    p.tensors[m + "conv_b"] = Tensor::zeros({Di});
    p.tensors[m + "delta_w"] = init.fan_in({Di, Di}, Di);
    Tensor delta_b({Di});
    for (auto& v : delta_b.data()) v = ssm::inverse_softplus(init.log_uniform(1e-3, 1e-1));
    p.tensors[m + "delta_b"] = std::move(delta_b);
    p.tensors[m + "b_w"] = init.fan_in({Di, N}, Di);
    p.tensors[m + "c_w"] = init.fan_in({Di, N}, Di);
    Tensor a_log({Di, N});
    for (std::size_t d = 0; d < Di; ++d)
      for (std::size_t n = 0; n < N; ++n) a_log.at(d, n) = std::log(static_cast<double>(n + 1));
    p.tensors[m + "a_log"] = std::move(a_log);
    p.tensors[m + "d"] = Tensor::full({Di}, 1.0);
    p.tensors[m + "out_w"] = init.fan_in({Di, C}, Di);

    const std::string f = "block" + std::to_string(b) + ".ffn.";
    p.tensors[f + "up_w"] = init.fan_in({C, Cm}, C);
    p.tensors[f + "up_b"] = Tensor::zeros({Cm});
    p.tensors[f + "w_re"] = init.fan_in({Cm, Cm}, Cm);
    p.tensors[f + "w_im"] = init.fan_in({Cm, Cm}, Cm);
    p.tensors[f + "b_re"] = Tensor::zeros({Cm});
    p.tensors[f + "b_im"] = Tensor::zeros({Cm});
    p.tensors[f + "down_w"] = init.fan_in({Cm, C}, Cm);
    p.tensors[f + "down_b"] = Tensor::zeros({C});

    add_norm(p, "block" + std::to_string(b) + ".norm1", C);
    add_norm(p, "block" + std::to_string(b) + ".norm2", C);
  }
  p.tensors["head.w"] = init.fan_in({C, 1}, C);
  p.tensors["head.b"] = Tensor::zeros({1});
  return p;
}

Bound::Bound(ParamSet& params, Tape* tape) : params_(params) {
  for (const auto& [name, t] : params.tensors) vars_.emplace(name, tape ? tape->leaf(t) : constant(t));
}

const Var& Bound::operator[](const std::string& name) const {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("model: missing parameter '" + name + "'");
  return it->second;
}

void Bound::rebind(const std::string& name, Var value) {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("model: missing parameter '" + name + "'");
  if (value.shape() != it->second.shape()) throw ShapeError("model: rebinding '" + name + "' changes its shape");
  it->second = std::move(value);
}

ops::BatchNormState& Bound::bn(const std::string& name) {
  const auto it = params_.batchnorm.find(name);
  if (it == params_.batchnorm.end()) throw ConfigError("model: missing batch-norm state '" + name + "'");
  return it->second;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::Container c;
  c.put_text("model_config", ckpt.config.to_text());
  c.put_text("run_config", ckpt.run_config);
  for (const auto& [name, t] : ckpt.params.tensors) c.put("param/" + name, t);
  for (const auto& [name, st] : ckpt.params.batchnorm) {
    c.put("bn/" + name + "/mean", st.running_mean);
    c.put("bn/" + name + "/var", st.running_var);
  }
  io::write_container(path, c);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const io::Container c = io::read_container(path);
  if (!c.contains("model_config")) throw IoError("checkpoint " + path.string() + ": missing model_config entry");
  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_text(c.text("model_config"));
  if (c.contains("run_config")) ckpt.run_config = c.text("run_config");
  // Start from the expected layout so missing or misshapen entries are caught.
  ckpt.params = init_params(ckpt.config, 0);
  for (auto& [name, t] : ckpt.params.tensors) {
    const std::string key = "param/" + name;
    if (!c.contains(key)) throw IoError("checkpoint " + path.string() + ": missing " + key);
    const Tensor& stored = c.tensor(key);
    if (stored.shape() != t.shape()) {
      throw IoError("checkpoint " + path.string() + ": " + key + " has shape " + shape_str(stored.shape()) +
                    ", expected " + shape_str(t.shape()));
    }
    t = stored;
  }
  for (auto& [name, st] : ckpt.params.batchnorm) {
    const std::string mk = "bn/" + name + "/mean", vk = "bn/" + name + "/var";
    if (!c.contains(mk) || !c.contains(vk)) throw IoError("checkpoint " + path.string() + ": missing bn/" + name);
    st.running_mean = c.tensor(mk);
    st.running_var = c.tensor(vk);
  }
  return ckpt;
}

}  // namespace rhythm::model
