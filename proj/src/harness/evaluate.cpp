#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "rhythm/error.hpp"
#include "rhythm/harness.hpp"

namespace rhythm::harness {
namespace {

synth::VideoClip leading(const synth::VideoClip& clip, std::size_t frames) {
  const std::size_t T = clip.length();
  if (frames == 0 || frames >= T) return clip;
  const std::size_t plane = clip.frames.dim(2) * clip.frames.dim(3);
  synth::VideoClip out;
  out.hr_bpm = clip.hr_bpm;
  out.frames = Tensor({3, frames, clip.frames.dim(2), clip.frames.dim(3)});
  for (std::size_t c = 0; c < 3; ++c)
    std::copy_n(clip.frames.data().begin() + c * T * plane, frames * plane, out.frames.data().begin() + c * frames * plane);
  out.gt_wave = {{clip.gt_wave.samples.begin(), clip.gt_wave.samples.begin() + long(frames)}, clip.gt_wave.fs};
  return out;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

dsp::Wave predict_wave(const synth::VideoClip& clip, Predictor predictor, model::ParamSet* params,
                       const model::ModelConfig* cfg) {
  switch (predictor) {
    case Predictor::oracle: return clip.gt_wave;
    case Predictor::green: return synth::green_mean(clip);
    case Predictor::model: break;
  }
  if (!params || !cfg) throw ConfigError("predict_wave: the model predictor needs parameters and a config");
  return {model::predict(synth::to_time_major(clip.frames), *params, *cfg), clip.gt_wave.fs};
}

EvalResult evaluate_clips(const std::vector<std::pair<std::string, synth::VideoClip>>& clips, Predictor predictor,
                          model::ParamSet* params, const model::ModelConfig* cfg, std::size_t max_frames) {
  EvalResult r;
  std::vector<double> pred_hrs, gt_hrs;
  std::vector<dsp::Wave> pred_waves, gt_waves;
  for (const auto& [id, full] : clips) {
    const synth::VideoClip clip = leading(full, max_frames);
    ClipResult c;
    c.clip_id = id;
    c.pred_wave = predict_wave(clip, predictor, params, cfg);
    c.gt_wave = clip.gt_wave;
    c.gt_hr = dsp::wave_hr(c.gt_wave).bpm;
    c.pred_hr = dsp::wave_hr(c.pred_wave).bpm;
    c.snr_db = dsp::snr_db(c.pred_wave, c.gt_hr);
    pred_hrs.push_back(c.pred_hr);
    gt_hrs.push_back(c.gt_hr);
    pred_waves.push_back(c.pred_wave);
    gt_waves.push_back(c.gt_wave);
    r.clips.push_back(std::move(c));
  }
  if (!r.clips.empty()) r.metrics = dsp::metrics(pred_hrs, gt_hrs, pred_waves, gt_waves);
  return r;
}

EvalResult evaluate(const model::Checkpoint& ckpt, const std::filesystem::path& test_dir, Predictor predictor,
                    std::size_t max_frames) {
  std::vector<std::pair<std::string, synth::VideoClip>> clips;
  for (const auto& row : synth::read_manifest(test_dir / "test.csv")) {
    synth::VideoClip clip = synth::load_clip(test_dir / row.path);
    if (predictor == Predictor::model &&
        (clip.frames.dim(2) != ckpt.config.input_hw || clip.frames.dim(3) != ckpt.config.input_hw)) {
      throw ConfigError("evaluate: clip " + row.path + " is " + std::to_string(clip.frames.dim(2)) + "x" +
                        std::to_string(clip.frames.dim(3)) + " but the checkpoint expects input_hw = " +
                        std::to_string(ckpt.config.input_hw));
    }
    clips.emplace_back(row.path, std::move(clip));
  }
  model::ParamSet params = ckpt.params;
  return evaluate_clips(clips, predictor, &params, &ckpt.config, max_frames);
}

void write_eval_csv(const std::filesystem::path& path, const std::string& hash, const EvalResult& result) {
  std::vector<dsp::MetricsRow> rows;
  for (const auto& c : result.clips) rows.push_back({c.clip_id, c.gt_hr, c.pred_hr, c.snr_db});
  auto out = open_csv(path);
  dsp::write_metrics_csv(out, hash, rows);
  if (!out) throw IoError("failed writing " + path.string());
}

void write_summary_csv(const std::filesystem::path& path, const std::string& hash, const dsp::Metrics& m) {
  auto out = open_csv(path);
  out << "# config_hash=" << hash << "\nmae,rmse,mape,rho,snr_db\n"
      << std::setprecision(10) << m.mae << ',' << m.rmse << ',' << m.mape << ',' << m.rho << ',' << m.snr << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

InferResult infer(model::ParamSet& params, const model::ModelConfig& cfg, const synth::VideoClip& clip) {
  InferResult r;
  r.wave = predict_wave(clip, Predictor::model, &params, &cfg);
  r.hr = dsp::wave_hr(r.wave);
  r.snr_db = dsp::snr_db(r.wave, r.hr.bpm);
  if (double(clip.length()) < 2.0 * clip.gt_wave.fs) r.warnings.emplace_back(kShortClipWarning);
  const auto [lo, hi] = std::minmax_element(r.wave.samples.begin(), r.wave.samples.end());
  if (*hi - *lo < 1e-6) r.warnings.emplace_back("flat output, no pulse found");
  if (r.hr.low_confidence) r.warnings.emplace_back("low-confidence spectral peak");
  return r;
}

void write_wave_csv(const std::filesystem::path& path, const std::string& hash, const dsp::Wave& wave) {
  auto out = open_csv(path);
  out << "# config_hash=" << hash << "\nt,bvp\n" << std::setprecision(10);
  for (std::size_t i = 0; i < wave.size(); ++i) out << double(i) / wave.fs << ',' << wave.samples[i] << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace rhythm::harness
