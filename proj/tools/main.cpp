// rhythm: synth | train | evaluate | infer | bench-scan
#include <cmath>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "rhythm/error.hpp"
#include "rhythm/harness.hpp"

using namespace rhythm;
using namespace rhythm::harness;

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumeric = 3, kIo = 4 };

struct ConfigFlags {
  std::string path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;

  void attach(CLI::App* app, bool training) {
    app->add_option("-c,--config", path, "config file of 'key = value' lines");
    app->add_option("--set", sets, "override, key=value (repeatable)");
    if (training) {
      app->add_option("--seed", seed, "train.seed");
      app->add_option("--epochs", epochs, "train.epochs");
      app->add_option("--lr", lr, "train.lr");
    }
  }

  RunConfig load() const {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& s : sets) overrides.push_back(parse_override(s));
    if (seed) overrides.emplace_back("train.seed", std::to_string(*seed));
    if (epochs) overrides.emplace_back("train.epochs", std::to_string(*epochs));
    if (lr) {
      std::ostringstream v;
      v << std::setprecision(17) << *lr;
      overrides.emplace_back("train.lr", v.str());
    }
    return RunConfig::load(path, overrides);
  }
};

void print_metrics(const dsp::Metrics& m) {
  std::cout << "MAE " << m.mae << " bpm, RMSE " << m.rmse << " bpm, MAPE " << m.mape << " %, rho " << m.rho
            << ", SNR " << m.snr << " dB\n";
}

Predictor parse_predictor(const std::string& s) {
  if (s == "model") return Predictor::model;
  if (s == "oracle") return Predictor::oracle;
  if (s == "green") return Predictor::green;
  throw ConfigError("unknown predictor '" + s + "' (model, oracle, green)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic-video rPPG model: data generation, training, evaluation and scan benchmarks"};
  app.require_subcommand(1);

  ConfigFlags synth_flags, train_flags, bench_flags;
  std::string synth_out = "data", train_data = "data", train_out = "run";
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic train/test clip set");
  synth_flags.attach(synth_cmd, false);
  synth_cmd->add_option("-o,--out", synth_out, "output directory");

  auto* train_cmd = app.add_subcommand("train", "train on <data>/train.csv");
  train_flags.attach(train_cmd, true);
  train_cmd->add_option("-d,--data", train_data, "dataset directory");
  train_cmd->add_option("-o,--out", train_out, "run directory (checkpoint, log, manifest)");

  std::string eval_ckpt, eval_data = "data", eval_out = "metrics.csv", eval_predictor = "model";
  std::size_t eval_frames = 0;
  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on <data>/test.csv");
  eval_cmd->add_option("-k,--checkpoint", eval_ckpt, "checkpoint file (model predictor)");
  eval_cmd->add_option("-d,--data", eval_data, "dataset directory");
  eval_cmd->add_option("-o,--out", eval_out, "per-clip metrics CSV; a _summary.csv goes alongside");
  eval_cmd->add_option("--predictor", eval_predictor, "model, oracle (gt wave) or green (channel mean)");
  eval_cmd->add_option("--frames", eval_frames, "keep only the leading frames of each clip (0 = all)");

  std::string infer_ckpt, infer_clip, infer_out = "wave.csv";
  auto* infer_cmd = app.add_subcommand("infer", "predict the pulse wave and HR of one clip");
  infer_cmd->add_option("-k,--checkpoint", infer_ckpt, "checkpoint file")->required();
  infer_cmd->add_option("clip", infer_clip, "clip file")->required();
  infer_cmd->add_option("-o,--out", infer_out, "wave CSV");

  std::string bench_out = "bench_scan.csv";
  auto* bench_cmd = app.add_subcommand("bench-scan", "time sequential, parallel and kernel scans");
  bench_flags.attach(bench_cmd, false);
  bench_cmd->add_option("-o,--out", bench_out, "timing CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (synth_cmd->parsed()) {
      const RunConfig cfg = synth_flags.load();
      const auto ds = synth::write_dataset(synth_out, cfg.synth.dataset(cfg.model.input_hw), config_hash(cfg));
      std::cout << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test clips to " << synth_out
                << "\n";
    } else if (train_cmd->parsed()) {
      const RunConfig cfg = train_flags.load();
      const auto r = train(cfg, train_data, train_out);
      for (std::size_t e = 0; e < r.epoch_losses.size(); ++e)
        std::cout << "epoch " << e << " loss " << r.epoch_losses[e] << "\n";
      std::cout << "checkpoint " << r.checkpoint.string() << "\n";
    } else if (eval_cmd->parsed()) {
      const Predictor predictor = parse_predictor(eval_predictor);
      if (predictor == Predictor::model && eval_ckpt.empty()) throw ConfigError("evaluate: --checkpoint is required");
      const model::Checkpoint ckpt = eval_ckpt.empty() ? model::Checkpoint{} : model::load_checkpoint(eval_ckpt);
      const auto r = evaluate(ckpt, eval_data, predictor, eval_frames);
      const std::string hash = fnv1a_hex(ckpt.run_config);
      write_eval_csv(eval_out, hash, r);
      std::filesystem::path summary = eval_out;
      summary.replace_filename(summary.stem().string() + "_summary.csv");
      write_summary_csv(summary, hash, r.metrics);
      print_metrics(r.metrics);
    } else if (infer_cmd->parsed()) {
      auto ckpt = model::load_checkpoint(infer_ckpt);
      const auto clip = synth::load_clip(infer_clip);
      const auto r = infer(ckpt.params, ckpt.config, clip);
      write_wave_csv(infer_out, fnv1a_hex(ckpt.run_config), r.wave);
      std::cout << "HR " << r.hr.bpm << " bpm, SNR " << r.snr_db << " dB\n";
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    } else if (bench_cmd->parsed()) {
      const RunConfig cfg = bench_flags.load();
      const auto r = bench_scan(cfg.bench);
      write_bench_csv(bench_out, config_hash(cfg), r);
      for (const auto& row : r.rows) std::cout << row.mode << " L=" << row.length << " " << row.seconds << " s\n";
      for (const auto& [mode, slope] : r.slopes) std::cout << "slope " << mode << " " << slope << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ShapeError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  }
  return kOk;
}
