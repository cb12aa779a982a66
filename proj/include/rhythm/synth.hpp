#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rhythm/dsp.hpp"
#include "rhythm/tensor.hpp"

namespace rhythm::synth {

struct PulseSpec {
  double hr_bpm = 72.0;
  double fs = 30.0;
  double duration_s = 10.0;
  std::vector<double> harmonic_ratios{1.0, 0.35, 0.1};
  double hr_jitter_pct = 0.0;  // sigma of each beat interval, fraction of the period
  double noise_std = 0.0;

  std::size_t length() const;
  // Throws ConfigError outside 45..150 bpm or on non-positive rates.
  void validate() const;
};

// Elliptical skin patch centred in the frame; radii are fractions of hw.
struct SkinRegion {
  double center_x = 0.5;
  double center_y = 0.5;
  double radius_x = 0.32;
  double radius_y = 0.4;
};

struct SceneSpec {
  std::size_t hw = 32;
  SkinRegion skin;
  double modulation_depth = 0.01;
  double illumination_drift = 0.0;  // amplitude of a slow additive drift
  double sensor_noise_std = 0.0;
  double motion_amplitude_px = 0.0;  // horizontal sway of the skin patch

  // Throws ConfigError unless 0 <= modulation_depth <= 0.05 and hw >= 8.
  void validate() const;
};

struct VideoClip {
  Tensor frames;       // [3, T, H, W]
  dsp::Wave gt_wave;   // length T
  double hr_bpm = 0.0; // label

  std::size_t length() const { return frames.dim(1); }
};

dsp::Wave gen_pulse(const PulseSpec& spec, std::uint64_t seed);
VideoClip gen_clip(const dsp::Wave& pulse, double hr_bpm, const SceneSpec& scene, std::uint64_t seed);

struct AugmentPolicy {
  bool hflip = false;
  double time_scale = 1.0;  // output length = round(T * time_scale)
};

struct AugmentConfig {
  double hflip_prob = 0.5;
  double min_scale = 0.8;
  double max_scale = 1.25;
};

AugmentPolicy sample_policy(const AugmentConfig& cfg, std::uint64_t seed);
// Throws ShapeError when the resampled clip is shorter than 5 frames and
// ConfigError for a scale outside [0.8, 1.25].
VideoClip apply_augment(const VideoClip& clip, const AugmentPolicy& policy);
VideoClip augment(const VideoClip& clip, const AugmentConfig& cfg, std::uint64_t seed);

// GREEN baseline: spatial mean of the green channel per frame.
dsp::Wave green_mean(const VideoClip& clip);

// [3, T, H, W] <-> [T, 3, H, W]
Tensor to_time_major(const Tensor& frames);
Tensor to_channel_major(const Tensor& frames);

// Container entries "frames" (f32), "gt_wave", "fs", "hr_bpm".
void save_clip(const std::filesystem::path& path, const VideoClip& clip);
VideoClip load_clip(const std::filesystem::path& path);

struct DatasetSpec {
  std::size_t n_train = 40;
  std::size_t n_test = 20;
  std::uint64_t seed = 1;
  double hr_min = 50.0;
  double hr_max = 140.0;
  PulseSpec pulse;   // hr_bpm is drawn per clip
  SceneSpec scene;
};

struct ManifestRow {
  std::string path;  // relative to the dataset directory
  double hr_bpm = 0.0;
  std::uint64_t seed = 0;
};

struct Dataset {
  std::vector<ManifestRow> train;
  std::vector<ManifestRow> test;
};

// Per-clip seed derived from the dataset seed and a running index.
std::uint64_t clip_seed(std::uint64_t dataset_seed, std::uint64_t index);
// Writes train/ and test/ clips plus train.csv and test.csv manifests.
Dataset write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, const std::string& config_hash);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& csv);

}  // namespace rhythm::synth
