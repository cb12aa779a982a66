#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>

#include "json.hpp"
#include "rhythm/error.hpp"
#include "rhythm/harness.hpp"

namespace rhythm::harness {
namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

synth::VideoClip crop(const synth::VideoClip& clip, std::size_t begin, std::size_t length) {
  const std::size_t T = clip.length(), plane = clip.frames.dim(2) * clip.frames.dim(3);
  synth::VideoClip out;
  out.hr_bpm = clip.hr_bpm;
  out.frames = Tensor({3, length, clip.frames.dim(2), clip.frames.dim(3)});
  const auto src = clip.frames.data();
  auto dst = out.frames.data();
  for (std::size_t c = 0; c < 3; ++c)
    std::copy_n(src.begin() + (c * T + begin) * plane, length * plane, dst.begin() + c * length * plane);
  out.gt_wave.fs = clip.gt_wave.fs;
  out.gt_wave.samples.assign(clip.gt_wave.samples.begin() + long(begin),
                             clip.gt_wave.samples.begin() + long(begin + length));
  return out;
}

std::size_t segment_count(std::size_t T, std::size_t F) { return std::max<std::size_t>(1, T / F); }

void write_log(const std::filesystem::path& path, const std::string& hash, const std::vector<double>& losses,
               std::size_t steps_per_epoch) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# config_hash=" << hash << "\nepoch,step,loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i / steps_per_epoch << ',' << i << ',' << losses[i] << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

synth::VideoClip training_segment(const synth::VideoClip& clip, std::size_t F, std::size_t index) {
  const std::size_t T = clip.length();
  if (T >= F) return crop(clip, (index % segment_count(T, F)) * F, F);
  const std::size_t L = T / 4 * 4;
  if (L < 8) throw ShapeError("training clip of " + std::to_string(T) + " frames is too short");
  return crop(clip, 0, L);
}

void adam_step(model::ParamSet& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const TrainConfig& cfg) {
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (auto& [name, p] : params.tensors) {
    const auto g = grads.find(name);
    if (g == grads.end()) continue;
    auto& m = state.m.try_emplace(name, Tensor::zeros_like(p)).first->second;
    auto& v = state.v.try_emplace(name, Tensor::zeros_like(p)).first->second;
    auto pd = p.data();
    const auto gd = g->second.data();
    auto md = m.data(), vd = v.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gd[i];
      vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
      const double update = (md[i] / c1) / (std::sqrt(vd[i] / c2) + cfg.adam_eps) + cfg.weight_decay * pd[i];
      pd[i] -= cfg.lr * update;
    }
  }
}

TrainResult train_clips(const RunConfig& cfg, const std::vector<synth::VideoClip>& clips,
                        const std::filesystem::path& out_dir) {
  cfg.validate();
  if (clips.size() < 2) throw ConfigError("train: need at least 2 training clips, got " + std::to_string(clips.size()));
  const std::size_t F = cfg.model.frames_per_segment;
  const std::string hash = config_hash(cfg);

  std::vector<std::pair<std::size_t, std::size_t>> items;  // (clip, segment)
  for (std::size_t i = 0; i < clips.size(); ++i)
    for (std::size_t s = 0; s < segment_count(clips[i].length(), F); ++s) items.emplace_back(i, s);
  const std::size_t B = cfg.train.batch_size;
  const std::size_t steps_per_epoch = (items.size() + B - 1) / B;

  TrainResult result;
  result.params = model::init_params(cfg.model, cfg.train.seed);
  AdamState adam;
  dsp::LossConfig loss_cfg;
  loss_cfg.a = cfg.train.loss_a;
  loss_cfg.b = cfg.train.loss_b;
  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    result.checkpoint = out_dir / "checkpoint.rmtc";
  }

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix(cfg.train.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_sum = 0.0;
    for (std::size_t first = 0; first < order.size(); first += B, ++step) {
      const std::size_t last = std::min(order.size(), first + B);
      std::map<std::string, Tensor> grads;
      double batch_loss = 0.0;
      try {
        for (std::size_t k = first; k < last; ++k) {
          const auto [ci, si] = items[order[k]];
          synth::VideoClip clip = clips[ci];
          if (cfg.train.augment) clip = synth::augment(clip, {}, mix(mix(cfg.train.seed, epoch), k));
          const synth::VideoClip seg = training_segment(clip, F, si);

          Tape tape;
          model::Bound p(result.params, &tape);
          const Var y = model::model_forward(synth::to_time_major(seg.frames), p, cfg.model, {.mode = model::Mode::train});
          const Var loss = dsp::loss_overall(y, seg.gt_wave.samples, seg.gt_wave.fs, loss_cfg);
          if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");
          batch_loss += loss.item();
          const GradientMap g = tape.backward(loss);
          for (const auto& [name, v] : p.vars()) {
            if (!g.contains(v)) continue;
            auto [it, fresh] = grads.try_emplace(name, g[v]);
            if (!fresh) it->second += g[v];
          }
        }
      } catch (const NumericError& e) {
        throw NumericError("train: step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                           "): " + e.what());
      }
      const double n = double(last - first);
      for (auto& [name, g] : grads)
        for (auto& v : g.data()) v /= n;
      for (const auto& [name, g] : grads) {
        if (!g.all_finite()) {
          throw NumericError("train: step " + std::to_string(step) + ": non-finite gradient for " + name);
        }
      }
      adam_step(result.params, grads, adam, cfg.train);
      result.step_losses.push_back(batch_loss / n);
      epoch_sum += batch_loss;
    }
    result.epoch_losses.push_back(epoch_sum / double(items.size()));

    if (!out_dir.empty()) {
      model::save_checkpoint(result.checkpoint, {cfg.model, result.params, cfg.to_text()});
      write_log(out_dir / "train_log.csv", hash, result.step_losses, steps_per_epoch);
      nlohmann::json manifest = {{"config", cfg.to_text()},
                                 {"config_hash", hash},
                                 {"seed", cfg.train.seed},
                                 {"epochs_completed", epoch + 1},
                                 {"epoch_losses", result.epoch_losses},
                                 {"checkpoint", result.checkpoint.string()}};
      std::ofstream out(out_dir / "manifest.json");
      out << std::setw(2) << manifest << '\n';
      if (!out) throw IoError("failed writing " + (out_dir / "manifest.json").string());
    }
  }
  return result;
}

TrainResult train(const RunConfig& cfg, const std::filesystem::path& train_dir, const std::filesystem::path& out_dir) {
  std::vector<synth::VideoClip> clips;
  for (const auto& row : synth::read_manifest(train_dir / "train.csv")) clips.push_back(synth::load_clip(train_dir / row.path));
  for (const auto& c : clips) {
    if (c.frames.dim(2) != cfg.model.input_hw || c.frames.dim(3) != cfg.model.input_hw) {
      throw ConfigError("train: clip size " + shape_str(c.frames.shape()) + " does not match model.input_hw = " +
                        std::to_string(cfg.model.input_hw));
    }
  }
  return train_clips(cfg, clips, out_dir);
}

}  // namespace rhythm::harness
