#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rhythm/dsp.hpp"
#include "rhythm/model.hpp"
#include "rhythm/synth.hpp"

namespace rhythm::harness {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
  std::size_t epochs = 10;
  std::size_t batch_size = 2;  // segments per optimizer step
  std::uint64_t seed = 1;
  double loss_a = 0.2;
  double loss_b = 1.0;
  bool augment = true;
};

struct SynthConfig {
  std::size_t n_train = 40;
  std::size_t n_test = 20;
  std::uint64_t seed = 1;
  std::size_t frames = 160;
  double fs = 30.0;
  double hr_min = 50.0;
  double hr_max = 140.0;
  double jitter = 0.02;
  double pulse_noise = 0.0;
  double modulation = 0.01;
  double noise = 0.005;
  double drift = 0.0;
  double motion = 0.0;

  // hw comes from the model input size
  synth::DatasetSpec dataset(std::size_t hw) const;
};

struct BenchConfig {
  std::size_t min_log2 = 10;   // 1k
  std::size_t max_log2 = 18;   // 256k
  std::size_t repeats = 5;
  std::size_t state = 8;
  std::size_t kernel_max = 16384;
  std::size_t workers = 1;  // parallel mode
};

// Every run setting; text form is one "section.key = value" per line.
struct RunConfig {
  model::ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  BenchConfig bench;

  // Throws ConfigError on unknown keys, malformed values or invalid settings.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  // Reads `path` (if non-empty) and then applies `overrides` in order.
  static RunConfig load(const std::filesystem::path& path,
                        const std::vector<std::pair<std::string, std::string>>& overrides = {});
};

// 64-bit FNV-1a of the canonical text, 16 hex digits.
std::string fnv1a_hex(const std::string& text);
std::string config_hash(const RunConfig& cfg);

// Splits "key=value"; throws ConfigError without '='.
std::pair<std::string, std::string> parse_override(const std::string& text);

// ---- training

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::size_t step = 0;
};

void adam_step(model::ParamSet& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const TrainConfig& cfg);

struct TrainResult {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  std::filesystem::path checkpoint;
  model::ParamSet params;
};

// One clip's segment for a given visit; length a multiple of 4.
synth::VideoClip training_segment(const synth::VideoClip& clip, std::size_t frames_per_segment, std::size_t index);

// Trains on the clips listed in <train_dir>/train.csv. Writes checkpoint.rmtc
// after every epoch plus train_log.csv and manifest.json into out_dir. Throws
// NumericError naming the step on a non-finite loss.
TrainResult train(const RunConfig& cfg, const std::filesystem::path& train_dir, const std::filesystem::path& out_dir);
// In-memory variant over already loaded clips; writes nothing when out_dir is empty.
TrainResult train_clips(const RunConfig& cfg, const std::vector<synth::VideoClip>& clips,
                        const std::filesystem::path& out_dir = {});

// ---- evaluation

enum class Predictor { model, oracle, green };

struct ClipResult {
  std::string clip_id;
  double gt_hr = 0.0;
  double pred_hr = 0.0;
  double snr_db = 0.0;
  dsp::Wave pred_wave;
  dsp::Wave gt_wave;
};

struct EvalResult {
  std::vector<ClipResult> clips;
  dsp::Metrics metrics;
};

// Prediction for one clip: model output, the gt wave itself, or the green mean.
dsp::Wave predict_wave(const synth::VideoClip& clip, Predictor predictor, model::ParamSet* params,
                       const model::ModelConfig* cfg);
// max_frames > 0 keeps only the leading frames of each clip.
EvalResult evaluate_clips(const std::vector<std::pair<std::string, synth::VideoClip>>& clips, Predictor predictor,
                          model::ParamSet* params, const model::ModelConfig* cfg, std::size_t max_frames = 0);
// Loads <test_dir>/test.csv. Throws ConfigError when clip size and model disagree.
EvalResult evaluate(const model::Checkpoint& ckpt, const std::filesystem::path& test_dir,
                    Predictor predictor = Predictor::model, std::size_t max_frames = 0);
void write_eval_csv(const std::filesystem::path& path, const std::string& hash, const EvalResult& result);
void write_summary_csv(const std::filesystem::path& path, const std::string& hash, const dsp::Metrics& m);

// ---- inference

struct InferResult {
  dsp::Wave wave;
  dsp::HrEstimate hr;
  double snr_db = 0.0;
  std::vector<std::string> warnings;
};

inline constexpr const char* kShortClipWarning = "near-single-beat, reduced reliability";

InferResult infer(model::ParamSet& params, const model::ModelConfig& cfg, const synth::VideoClip& clip);
// "t,bvp" rows after a config-hash comment.
void write_wave_csv(const std::filesystem::path& path, const std::string& hash, const dsp::Wave& wave);

// ---- scan benchmark

struct BenchRow {
  std::string mode;  // sequential | parallel | kernel
  std::size_t length = 0;
  double seconds = 0.0;
  std::size_t peak_bytes = 0;  // buffers allocated by one call, inputs excluded
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::map<std::string, double> slopes;  // log-log fit per mode
};

// Least-squares slope of log(seconds) on log(length).
double loglog_slope(const std::vector<BenchRow>& rows, const std::string& mode);
// Throws NumericError if the parallel and sequential outputs disagree.
// CSV columns: mode, L, wall_time_ns, peak_bytes.
BenchResult bench_scan(const BenchConfig& cfg);
void write_bench_csv(const std::filesystem::path& path, const std::string& hash, const BenchResult& result);

}  // namespace rhythm::harness
