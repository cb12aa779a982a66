#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "rhythm/container.hpp"
#include "rhythm/error.hpp"
#include "rhythm/synth.hpp"

namespace rhythm::synth {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kDriftHz = 0.05;
constexpr double kSwayHz = 0.15;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

std::size_t PulseSpec::length() const { return static_cast<std::size_t>(std::llround(fs * duration_s)); }

void PulseSpec::validate() const {
  if (!(hr_bpm >= 45.0 && hr_bpm <= 150.0)) {
    throw ConfigError("pulse: hr_bpm must lie in [45, 150], got " + std::to_string(hr_bpm));
  }
  if (!(fs > 0.0)) throw ConfigError("pulse: fs must be positive");
  if (!(duration_s > 0.0) || length() < 2) throw ConfigError("pulse: duration must cover at least two samples");
  if (harmonic_ratios.empty()) throw ConfigError("pulse: need at least one harmonic");
  if (!(hr_jitter_pct >= 0.0 && hr_jitter_pct < 0.5)) throw ConfigError("pulse: hr_jitter_pct must lie in [0, 0.5)");
  if (!(noise_std >= 0.0)) throw ConfigError("pulse: noise_std must be non-negative");
}

void SceneSpec::validate() const {
  if (hw < 8) throw ConfigError("scene: hw must be at least 8");
  if (!(modulation_depth >= 0.0 && modulation_depth <= 0.05)) {
    throw ConfigError("scene: modulation_depth must lie in [0, 0.05]");
  }
  if (!(illumination_drift >= 0.0) || !(sensor_noise_std >= 0.0) || !(motion_amplitude_px >= 0.0)) {
    throw ConfigError("scene: drift, noise and motion amplitudes must be non-negative");
  }
  if (!(skin.radius_x > 0.0) || !(skin.radius_y > 0.0)) throw ConfigError("scene: skin radii must be positive");
}

dsp::Wave gen_pulse(const PulseSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t T = spec.length();
  const double period = 60.0 / spec.hr_bpm;
  const double duration = double(T) / spec.fs;

  // beat onsets; the first one precedes t = 0 by a random fraction of a period
  std::vector<double> onsets{-uniform(rng, 0.0, 1.0) * period};
  while (onsets.back() <= duration) {
    const double interval = period * std::clamp(1.0 + spec.hr_jitter_pct * gauss(rng), 0.5, 1.5);
    onsets.push_back(onsets.back() + interval);
  }

  dsp::Wave w{std::vector<double>(T), spec.fs};
  std::size_t k = 0;
  for (std::size_t i = 0; i < T; ++i) {
    const double t = double(i) / spec.fs;
    while (onsets[k + 1] <= t) ++k;
    const double phase = kTwoPi * (double(k) + (t - onsets[k]) / (onsets[k + 1] - onsets[k]));
    double v = 0.0;
    for (std::size_t h = 0; h < spec.harmonic_ratios.size(); ++h) v += spec.harmonic_ratios[h] * std::sin(double(h + 1) * phase);
    w.samples[i] = v;
  }
  if (spec.noise_std > 0.0) {
    for (auto& v : w.samples) v += spec.noise_std * gauss(rng);
  }
  return w;
}

VideoClip gen_clip(const dsp::Wave& pulse, double hr_bpm, const SceneSpec& scene, std::uint64_t seed) {
  scene.validate();
  pulse.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t T = pulse.size(), H = scene.hw, W = scene.hw, plane = H * W;

  double base[3] = {0.72, 0.52, 0.42};
  for (double& b : base) b += uniform(rng, -0.05, 0.05);
  std::vector<double> shade(plane), background(3 * plane);
  for (auto& s : shade) s = uniform(rng, 0.9, 1.1);
  for (auto& b : background) b = uniform(rng, 0.2, 0.35);
  const double drift_phase = uniform(rng, 0.0, kTwoPi), sway_phase = uniform(rng, 0.0, kTwoPi);

  const double cx = scene.skin.center_x * double(W), cy = scene.skin.center_y * double(H);
  const double rx = scene.skin.radius_x * double(W), ry = scene.skin.radius_y * double(H);

  VideoClip clip;
  clip.frames = Tensor({3, T, H, W});
  clip.gt_wave = pulse;
  clip.hr_bpm = hr_bpm;
  auto px = clip.frames.data();
  for (std::size_t t = 0; t < T; ++t) {
    const double time = double(t) / pulse.fs;
    const double drift = scene.illumination_drift * std::sin(kTwoPi * kDriftHz * time + drift_phase);
    const double dx = scene.motion_amplitude_px * std::sin(kTwoPi * kSwayHz * time + sway_phase);
    const double gain = 1.0 + scene.modulation_depth * pulse.samples[t];
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double ex = (double(x) + 0.5 - cx - dx) / rx, ey = (double(y) + 0.5 - cy) / ry;
        const bool skin = ex * ex + ey * ey <= 1.0;
        for (std::size_t c = 0; c < 3; ++c) {
          double v = skin ? base[c] * shade[y * W + x] * gain : background[c * plane + y * W + x];
          v += drift;
          if (scene.sensor_noise_std > 0.0) v += scene.sensor_noise_std * gauss(rng);
          px[(c * T + t) * plane + y * W + x] = v;
        }
      }
    }
  }
  return clip;
}

AugmentPolicy sample_policy(const AugmentConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  AugmentPolicy p;
  p.hflip = uniform(rng, 0.0, 1.0) < cfg.hflip_prob;
  p.time_scale = cfg.min_scale == cfg.max_scale ? cfg.min_scale : uniform(rng, cfg.min_scale, cfg.max_scale);
  return p;
}

VideoClip apply_augment(const VideoClip& clip, const AugmentPolicy& policy) {
  if (!(policy.time_scale >= 0.8 - 1e-12 && policy.time_scale <= 1.25 + 1e-12)) {
    throw ConfigError("augment: time_scale must lie in [0.8, 1.25]");
  }
  VideoClip out = clip;
  const std::size_t T = clip.frames.dim(1), H = clip.frames.dim(2), W = clip.frames.dim(3), plane = H * W;
  if (policy.hflip) {
    auto d = out.frames.data();
    for (std::size_t row = 0; row < 3 * T * H; ++row) std::reverse(d.begin() + row * W, d.begin() + (row + 1) * W);
  }
  if (policy.time_scale == 1.0) return out;

  const std::size_t Tn = static_cast<std::size_t>(std::llround(double(T) * policy.time_scale));
  if (Tn < 5) throw ShapeError("augment: resampled length " + std::to_string(Tn) + " is below 5 frames");
  // output sample j reads source position j / scale
  auto source = [&](std::size_t j, std::size_t& i0, double& frac) {
    const double s = std::min(double(j) / policy.time_scale, double(T - 1));
    i0 = std::min(static_cast<std::size_t>(s), T - 2);
    frac = s - double(i0);
  };
  Tensor frames({3, Tn, H, W});
  const auto src = out.frames.data();
  auto dst = frames.data();
  std::vector<double> wave(Tn);
  for (std::size_t j = 0; j < Tn; ++j) {
    std::size_t i0;
    double f;
    source(j, i0, f);
    wave[j] = (1.0 - f) * clip.gt_wave.samples[i0] + f * clip.gt_wave.samples[i0 + 1];
    for (std::size_t c = 0; c < 3; ++c) {
      const double* a = src.data() + (c * T + i0) * plane;
      const double* b = a + plane;
      double* o = dst.data() + (c * Tn + j) * plane;
      for (std::size_t i = 0; i < plane; ++i) o[i] = (1.0 - f) * a[i] + f * b[i];
    }
  }
  out.frames = std::move(frames);
  out.gt_wave.samples = std::move(wave);
  out.hr_bpm = clip.hr_bpm / policy.time_scale;
  return out;
}

VideoClip augment(const VideoClip& clip, const AugmentConfig& cfg, std::uint64_t seed) {
  return apply_augment(clip, sample_policy(cfg, seed));
}

dsp::Wave green_mean(const VideoClip& clip) {
  const std::size_t T = clip.frames.dim(1), plane = clip.frames.dim(2) * clip.frames.dim(3);
  dsp::Wave w{std::vector<double>(T), clip.gt_wave.fs};
  const auto px = clip.frames.data();
  for (std::size_t t = 0; t < T; ++t) {
    const double* p = px.data() + (T + t) * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    w.samples[t] = s / double(plane);
  }
  return w;
}

namespace {
Tensor swap_leading(const Tensor& in, const char* what) {
  if (in.rank() != 4) throw ShapeError(std::string(what) + ": expected a rank-4 tensor, got " + shape_str(in.shape()));
  const std::size_t A = in.dim(0), B = in.dim(1), plane = in.dim(2) * in.dim(3);
  Tensor out({B, A, in.dim(2), in.dim(3)});
  const auto s = in.data();
  auto d = out.data();
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(s.begin() + (a * B + b) * plane, plane, d.begin() + (b * A + a) * plane);
  return out;
}
}  // namespace

Tensor to_time_major(const Tensor& frames) {
  if (frames.rank() == 4 && frames.dim(0) != 3) throw ShapeError("to_time_major: expected [3, T, H, W]");
  return swap_leading(frames, "to_time_major");
}

Tensor to_channel_major(const Tensor& frames) {
  if (frames.rank() == 4 && frames.dim(1) != 3) throw ShapeError("to_channel_major: expected [T, 3, H, W]");
  return swap_leading(frames, "to_channel_major");
}

void save_clip(const std::filesystem::path& path, const VideoClip& clip) {
  io::Container c;
  c.put("frames", clip.frames.as_dtype(DType::f32));
  c.put("gt_wave", Tensor({clip.gt_wave.size()}, clip.gt_wave.samples));
  c.put("fs", Tensor::scalar(clip.gt_wave.fs));
  c.put("hr_bpm", Tensor::scalar(clip.hr_bpm));
  io::write_container(path, c);
}

VideoClip load_clip(const std::filesystem::path& path) {
  const io::Container c = io::read_container(path);
  for (const char* key : {"frames", "gt_wave", "fs"}) {
    if (!c.contains(key)) throw IoError("clip " + path.string() + ": missing entry '" + key + "'");
  }
  VideoClip clip;
  clip.frames = c.tensor("frames").as_dtype(DType::f64);
  const Tensor& wave = c.tensor("gt_wave");
  if (clip.frames.rank() != 4 || clip.frames.dim(0) != 3 || wave.rank() != 1 || wave.dim(0) != clip.frames.dim(1)) {
    throw IoError("clip " + path.string() + ": frames " + shape_str(clip.frames.shape()) + " and gt_wave " +
                  shape_str(wave.shape()) + " are inconsistent");
  }
  clip.gt_wave = dsp::Wave{{wave.data().begin(), wave.data().end()}, c.tensor("fs").item()};
  clip.hr_bpm = c.contains("hr_bpm") ? c.tensor("hr_bpm").item() : 0.0;
  return clip;
}

std::uint64_t clip_seed(std::uint64_t dataset_seed, std::uint64_t index) {
  return splitmix64(splitmix64(dataset_seed) ^ (index + 1));
}

namespace {
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows, const std::string& hash) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "# config_hash=" << hash << "\npath,hr_bpm,seed\n" << std::setprecision(10);
  for (const auto& r : rows) out << r.path << ',' << r.hr_bpm << ',' << r.seed << '\n';
  if (!out) throw IoError("failed writing manifest " + path.string());
}
}  // namespace

Dataset write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, const std::string& config_hash) {
  spec.pulse.validate();
  spec.scene.validate();
  if (!(spec.hr_min >= 45.0 && spec.hr_max <= 150.0 && spec.hr_min <= spec.hr_max)) {
    throw ConfigError("dataset: hr range must lie within [45, 150]");
  }
  std::error_code ec;
  for (const char* sub : {"train", "test"}) {
    std::filesystem::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
  }
  Dataset ds;
  for (std::size_t i = 0; i < spec.n_train + spec.n_test; ++i) {
    const bool train = i < spec.n_train;
    const std::uint64_t seed = clip_seed(spec.seed, i);
    std::mt19937_64 rng(seed);
    PulseSpec ps = spec.pulse;
    ps.hr_bpm = uniform(rng, spec.hr_min, spec.hr_max);
    const VideoClip clip = gen_clip(gen_pulse(ps, splitmix64(seed ^ 1)), ps.hr_bpm, spec.scene, splitmix64(seed ^ 2));
    std::ostringstream name;
    name << (train ? "train" : "test") << "/clip_" << std::setw(4) << std::setfill('0') << i << ".rmtc";
    save_clip(dir / name.str(), clip);
    (train ? ds.train : ds.test).push_back({name.str(), ps.hr_bpm, seed});
  }
  write_manifest(dir / "train.csv", ds.train, config_hash);
  write_manifest(dir / "test.csv", ds.test, config_hash);
  return ds;
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot read manifest " + csv.string());
  std::vector<ManifestRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::istringstream fields(line);
    std::string path, hr, seed;
    if (!std::getline(fields, path, ',') || !std::getline(fields, hr, ',') || !std::getline(fields, seed)) {
      throw IoError("manifest " + csv.string() + ": malformed row '" + line + "'");
    }
    try {
      rows.push_back({path, std::stod(hr), std::stoull(seed)});
    } catch (const std::exception&) {
      throw IoError("manifest " + csv.string() + ": malformed row '" + line + "'");
    }
  }
  return rows;
}

}  // namespace rhythm::synth
