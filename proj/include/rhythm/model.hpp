#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rhythm/autodiff.hpp"
#include "rhythm/ops.hpp"
#include "rhythm/ssm.hpp"

namespace rhythm::model {

struct ModelConfig {
  std::size_t depth = 2;
  std::size_t channels = 64;   // C
  std::size_t expansion = 2;   // C_mid = expansion * C
  std::size_t state_size = 16; // N
  std::size_t input_hw = 128;
  std::size_t frames_per_segment = 160;

  std::size_t c_mid() const { return expansion * channels; }
  // Throws ConfigError on an inconsistent configuration.
  void validate() const;
  // "key = value" lines, one per field.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

// Named parameter tensors plus batch-norm running statistics.
struct ParamSet {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, ops::BatchNormState> batchnorm;

  std::size_t scalar_count() const;
};

ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed);

// Parameters bound for one forward pass: tape leaves when a tape is given,
// constants otherwise.
class Bound {
 public:
  Bound(ParamSet& params, Tape* tape);
  const Var& operator[](const std::string& name) const;
  ops::BatchNormState& bn(const std::string& name);
  const std::map<std::string, Var>& vars() const { return vars_; }
  // Replaces the handle used for an existing parameter.
  void rebind(const std::string& name, Var value);

 private:
  ParamSet& params_;
  std::map<std::string, Var> vars_;
};

enum class Mode { train, eval };

struct ForwardOptions {
  Mode mode = Mode::eval;
  ssm::ScanMode scan = ssm::ScanMode::parallel;
  ssm::ScanOptions scan_opts{};
};

// Frames are [T, 3, H, W]. Difference stack [T, 12, H, W] with replicate
// edges: D_{t-2}, D_{t-1}, D_{t+1}, D_{t+2}, each pointing toward frame t.
Tensor frame_differences(const Tensor& frames);

struct FusionOutput {
  Var x_raw;     // Stem1 on X_t           [T, C/2, H/4, W/4]
  Var x_diff;    // Stem1 on differences   [T, C/2, H/4, W/4]
  Var x_fusion;  // [T, C, H/8, W/8]
};

FusionOutput diff_fusion(const Tensor& frames, Bound& p, Mode mode);
// N sigmoid(Stem3(x)) / (2 ||sigmoid(Stem3(x))||_1) per (frame, channel) plane.
Var attention_mask(const Var& x_fusion, Bound& p, Mode mode);
// Masked per-frame spatial average: [T, C].
Var frame_stem(const Tensor& frames, Bound& p, Mode mode);

// [begin, end) time ranges of the three paths: 1, 2 and 4 equal slices.
std::vector<std::vector<std::pair<std::size_t, std::size_t>>> path_slices(std::size_t T);

// One multi-temporal path set and gate; `prefix` selects the block.
Var mtc_mamba(const Var& x, Bound& p, const std::string& prefix, const ForwardOptions& opts = {});
Var freq_ffn(const Var& x, Bound& p, const std::string& prefix);
// Linear C -> 1 and per-clip standardisation: length-T vector.
Var predictor_head(const Var& x, Bound& p);

// Blocks on a feature sequence [T, C]. Eval mode pads T to a multiple of 4
// and trims afterwards; train mode requires T divisible by 4.
Var blocks_forward(const Var& x, Bound& p, const ModelConfig& cfg, const ForwardOptions& opts);
Var model_forward(const Tensor& frames, Bound& p, const ModelConfig& cfg, const ForwardOptions& opts = {});

// Eval-mode prediction as plain samples.
std::vector<double> predict(const Tensor& frames, ParamSet& params, const ModelConfig& cfg);

struct Checkpoint {
  ModelConfig config;
  ParamSet params;
  std::string run_config;  // free-form text stored alongside
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rhythm::model
