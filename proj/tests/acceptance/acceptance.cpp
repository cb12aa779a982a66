// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/test_util.hpp"
#include "rhythm/autodiff.hpp"
#include "rhythm/dsp.hpp"
#include "rhythm/harness.hpp"
#include "rhythm/model.hpp"
#include "rhythm/ops.hpp"
#include "rhythm/ssm.hpp"

using namespace rhythm;
using rhythm::testing::random_normal;
using rhythm::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << v;
  return s.str();
}

// ---- criterion 1

double linf(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Outcome scan_equivalences() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> neg(-3.0, -0.05), u(-1.0, 1.0), step(0.001, 1.0), decay(0.5, 0.999);
  auto signal = [&](std::size_t L) {
    std::vector<double> x(L);
    for (auto& v : x) v = u(rng);
    return x;
  };

  double lti = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const std::size_t N = 1 + rng() % 16, L = 1 + rng() % 256;
    ssm::SsmParams p;
    for (std::size_t n = 0; n < N; ++n) {
      p.a.push_back(neg(rng));
      p.b.push_back(u(rng));
      p.c.push_back(u(rng));
    }
    p.d = u(rng);
    const auto d = ssm::discretize_zoh(p, step(rng));
    const auto x = signal(L);
    lti = std::max(lti, linf(ssm::apply_kernel(ssm::ssm_kernel(d, p.c, L), x), ssm::scan_sequential(d, p.c, x)));
  }

  double sel = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const std::size_t L = draw == 0 ? 1024 : 1 + rng() % 1024, N = 1 + rng() % 16;
    ssm::SelectiveSsm s{L, N, {}, {}, {}, u(rng)};
    for (std::size_t i = 0; i < L * N; ++i) {
      s.a_bar.push_back(decay(rng));
      s.b_bar.push_back(u(rng));
      s.c.push_back(u(rng));
    }
    const auto x = signal(L);
    const ssm::ScanOptions opts{.chunk = 1 + rng() % 128, .workers = 1 + rng() % 4};
    sel = std::max(sel, linf(ssm::scan_parallel(s, x, opts), ssm::scan_sequential(s, x)));
  }
  const double secs = seconds_since(t0);
  return {lti <= 1e-8 && sel <= 1e-8 && secs < 10.0,
          "kernel/recurrence Linf " + fmt(lti) + ", parallel/sequential Linf " + fmt(sel) + ", " + fmt(secs) + " s"};
}

// ---- criterion 2

Var project(const Var& y, std::uint64_t seed) {
  return ops::sum(ops::mul(y, constant(random_tensor(y.shape(), seed + 1000))));
}

Tensor away_from_zero(Shape shape, std::uint64_t seed) {
  Tensor t = random_tensor(std::move(shape), seed, 0.1, 1.0);
  std::mt19937_64 rng(seed);
  for (auto& v : t.data())
    if (rng() & 1) v = -v;
  return t;
}

Tensor shuffled_grid(Shape shape, std::uint64_t seed) {
  Tensor x(std::move(shape));
  std::vector<double> grid(x.numel());
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 0.01 * static_cast<double>(i);
  std::shuffle(grid.begin(), grid.end(), std::mt19937_64(seed));
  std::copy(grid.begin(), grid.end(), x.data().begin());
  return x;
}

struct OpCase {
  std::string name;
  std::function<double(std::uint64_t)> run;
};

std::vector<OpCase> op_cases() {
  using In = std::span<const Var>;
  auto unary = [](auto op, auto make) {
    return [op, make](std::uint64_t s) {
      return grad_check([&](In in) { return project(op(in[0]), s); }, {make(s)});
    };
  };
  auto plain = [](std::uint64_t s) { return random_tensor({3, 5}, s); };
  std::vector<OpCase> cases{
      {"add", [](std::uint64_t s) {
         return grad_check([&](In in) { return project(ops::add(in[0], in[1]), s); },
                           {random_tensor({3, 5}, s), random_tensor({3, 5}, s + 50)});
       }},
      {"sub", [](std::uint64_t s) {
         return grad_check([&](In in) { return project(ops::sub(in[0], in[1]), s); },
                           {random_tensor({3, 5}, s), random_tensor({3, 5}, s + 50)});
       }},
      {"mul", [](std::uint64_t s) {
         return grad_check([&](In in) { return project(ops::mul(in[0], in[1]), s); },
                           {random_tensor({3, 5}, s), random_tensor({3, 5}, s + 50)});
       }},
      {"relu", unary([](const Var& x) { return ops::relu(x); }, [](std::uint64_t s) { return away_from_zero({3, 5}, s); })},
      {"silu", unary([](const Var& x) { return ops::silu(x); }, plain)},
      {"sigmoid", unary([](const Var& x) { return ops::sigmoid(x); }, plain)},
      {"softplus", unary([](const Var& x) { return ops::softplus(x); }, plain)},
      {"square", unary([](const Var& x) { return ops::square(x); }, plain)},
      {"log", unary([](const Var& x) { return ops::log(x); },
                    [](std::uint64_t s) { return random_tensor({3, 5}, s, 0.5, 2.0); })},
      {"mean", [](std::uint64_t s) {
         return grad_check([](In in) { return ops::mean(ops::square(in[0])); }, {random_tensor({3, 5}, s)});
       }},
      {"linear", [](std::uint64_t s) {
         return grad_check([&](In in) { return project(ops::linear(in[0], in[1], in[2]), s); },
                           {random_tensor({4, 4}, s), random_tensor({4, 4}, s + 10), random_tensor({4}, s + 20)});
       }},
      {"matmul", [](std::uint64_t s) {
         return grad_check([&](In in) { return project(ops::matmul(in[0], in[1]), s); },
                           {random_tensor({3, 4}, s), random_tensor({4, 2}, s + 1)});
       }},
      {"bias_add", [](std::uint64_t s) {
         return grad_check([&](In in) { return project(ops::bias_add(in[0], in[1]), s); },
                           {random_tensor({3, 4}, s), random_tensor({4}, s + 1)});
       }},
      {"conv2d", [](std::uint64_t s) {
         return grad_check(
             [&](In in) { return project(ops::conv2d(in[0], in[1], in[2], {.stride = 2, .padding = 1}), s); },
             {random_tensor({2, 2, 5, 6}, s), random_tensor({3, 2, 3, 3}, s + 1), random_tensor({3}, s + 2)});
       }},
      {"batchnorm2d(train)", [](std::uint64_t s) {
         return grad_check(
             [&](In in) {
               ops::BatchNormState st{Tensor::zeros({3}), Tensor::full({3}, 1.0)};
               return project(ops::batchnorm2d(in[0], in[1], in[2], st, true), s);
             },
             {random_tensor({4, 3, 3, 3}, s), random_tensor({3}, s + 1, 0.5, 1.5), random_tensor({3}, s + 2)});
       }},
      {"batchnorm2d(eval)", [](std::uint64_t s) {
         ops::BatchNormState st{random_tensor({3}, s + 3), random_tensor({3}, s + 4, 0.5, 2.0)};
         return grad_check([&](In in) { return project(ops::batchnorm2d(in[0], in[1], in[2], st, false), s); },
                           {random_tensor({2, 3, 3, 3}, s), random_tensor({3}, s + 1), random_tensor({3}, s + 2)});
       }},
      {"maxpool2d", unary([](const Var& x) { return ops::maxpool2d(x, 2); },
                          [](std::uint64_t s) { return shuffled_grid({2, 2, 4, 4}, s); })},
      {"global_avgpool_spatial", unary([](const Var& x) { return ops::global_avgpool_spatial(x); },
                                       [](std::uint64_t s) { return random_tensor({2, 3, 4, 4}, s); })},
      {"l1_normalize_spatial", unary([](const Var& x) { return ops::l1_normalize_spatial(x, 8.0); },
                                     [](std::uint64_t s) { return random_tensor({2, 2, 4, 4}, s, 0.05, 1.0); })},
      {"depthwise_conv1d", [](std::uint64_t s) {
         return grad_check([&](In in) { return project(ops::depthwise_conv1d(in[0], in[1], in[2]), s); },
                           {random_tensor({9, 3}, s), random_tensor({3, 4}, s + 1), random_tensor({3}, s + 2)});
       }},
      {"layernorm_channels", [](std::uint64_t s) {
         return grad_check([&](In in) { return project(ops::layernorm_channels(in[0], in[1], in[2]), s); },
                           {random_tensor({5, 4}, s), random_tensor({4}, s + 1), random_tensor({4}, s + 2)});
       }},
      {"slice_time", unary([](const Var& x) { return ops::slice_time(x, 2, 7); },
                           [](std::uint64_t s) { return random_tensor({9, 3}, s); })},
      {"concat_time", [](std::uint64_t s) {
         return grad_check(
             [&](In in) {
               return project(ops::concat_time({ops::slice_time(in[0], 0, 4), in[1], ops::slice_time(in[0], 4, 9)}), s);
             },
             {random_tensor({9, 3}, s), random_tensor({2, 3}, s + 5)});
       }},
      {"pad_time_replicate", unary([](const Var& x) { return ops::pad_time_replicate(x, 12); },
                                   [](std::uint64_t s) { return random_tensor({9, 3}, s); })},
      {"standardize", unary([](const Var& x) { return ops::standardize(x); },
                            [](std::uint64_t s) { return random_tensor({16}, s); })},
      {"reshape", unary([](const Var& x) { return ops::reshape(x, {27}); },
                        [](std::uint64_t s) { return random_tensor({9, 3}, s); })},
  };
  for (std::size_t T : {8u, 9u}) {
    const std::size_t F = T / 2 + 1;
    const std::string tag = "(T=" + std::to_string(T) + ")";
    cases.push_back({"rfft_time" + tag, unary([](const Var& x) { return ops::rfft_time(x); },
                                              [T](std::uint64_t s) { return random_tensor({T, 3}, s); })});
    cases.push_back({"irfft_time" + tag, unary([T](const Var& x) { return ops::irfft_time(x, T); },
                                               [F](std::uint64_t s) { return random_tensor({2, F, 3}, s); })});
    cases.push_back({"complex_linear" + tag, [F](std::uint64_t s) {
                       return grad_check(
                           [&](In in) { return project(ops::complex_linear(in[0], in[1], in[2], in[3], in[4]), s); },
                           {random_tensor({2, F, 3}, s), random_tensor({3, 2}, s + 1), random_tensor({3, 2}, s + 2),
                            random_tensor({2}, s + 3), random_tensor({2}, s + 4)});
                     }});
  }
  for (auto mode : {ssm::ScanMode::sequential, ssm::ScanMode::parallel}) {
    const std::string tag = mode == ssm::ScanMode::sequential ? "(sequential)" : "(parallel)";
    cases.push_back({"selective_scan" + tag, [mode](std::uint64_t s) {
                       const std::size_t T = 12, D = 2, N = 3;
                       return grad_check(
                           [&](In in) {
                             return project(ssm::selective_scan(in[0], in[1], in[2], in[3], in[4], in[5], mode,
                                                                {.chunk = 5}),
                                            s);
                           },
                           {random_tensor({T, D}, s), random_tensor({T, D}, s + 1, 0.05, 0.8),
                            random_tensor({D, N}, s + 2, -0.5, 1.0), random_tensor({T, N}, s + 3),
                            random_tensor({T, N}, s + 4), random_tensor({D}, s + 5)});
                     }});
  }
  cases.push_back({"selective_params", [](std::uint64_t s) {
                     const std::size_t T = 10, D = 3, N = 2;
                     return grad_check(
                         [&](In in) {
                           const auto sp = ssm::selective_params(in[0], {in[1], in[2], in[3], in[4]});
                           return project(ssm::selective_scan(in[0], sp.delta, in[5], sp.b, sp.c, in[6]), s);
                         },
                         {random_tensor({T, D}, s), random_tensor({D, D}, s + 1, -0.5, 0.5),
                          random_tensor({D}, s + 2, -3.0, -1.0), random_tensor({D, N}, s + 3),
                          random_tensor({D, N}, s + 4), random_tensor({D, N}, s + 5, 0.0, 1.0),
                          random_tensor({D}, s + 6)});
                   }});
  for (std::size_t T : {40u, 170u}) {
    const std::string tag = "(T=" + std::to_string(T) + ")";
    auto gt = [T](std::uint64_t s) {
      std::vector<double> g(T);
      for (std::size_t n = 0; n < T; ++n)
        g[n] = std::sin(2.0 * std::numbers::pi * (1.1 + 0.2 * double(s % 5)) * double(n) / 30.0 + 0.1 * double(s));
      return g;
    };
    cases.push_back({"loss_time" + tag, [T, gt](std::uint64_t s) {
                       const auto g = gt(s);
                       return grad_check([&](In in) { return dsp::loss_time(in[0], g); }, {random_tensor({T}, s)});
                     }});
    cases.push_back({"loss_freq" + tag, [T, gt](std::uint64_t s) {
                       const auto g = gt(s);
                       return grad_check([&](In in) { return dsp::loss_freq(in[0], g, 30.0); }, {random_tensor({T}, s)});
                     }});
  }
  return cases;
}

model::ModelConfig toy_config(std::size_t C, std::size_t depth, std::size_t hw) {
  model::ModelConfig cfg;
  cfg.channels = C;
  cfg.depth = depth;
  cfg.state_size = 4;
  cfg.expansion = 2;
  cfg.input_hw = hw;
  return cfg;
}

double full_model_grad_error() {
  const auto cfg = toy_config(8, 1, 16);
  model::ParamSet params = model::init_params(cfg, 31);
  for (auto& v : params.tensors["block0.mtc.delta_b"].data()) v = 0.0;
  const Tensor clip = random_tensor({8, 3, 16, 16}, 32, 0.0, 1.0);
  const Tensor direction = random_tensor({8}, 33);
  std::vector<std::string> names;
  std::vector<Tensor> inputs;
  for (const auto& [name, t] : params.tensors) {
    names.push_back(name);
    inputs.push_back(t);
  }
  auto fn = [&](std::span<const Var> in) {
    model::ParamSet local = params;
    model::Bound p(local, nullptr);
    for (std::size_t i = 0; i < names.size(); ++i) p.rebind(names[i], in[i]);
    const Var y = model::model_forward(clip, p, cfg, {.mode = model::Mode::train});
    return ops::sum(ops::mul(y, constant(direction)));
  };
  return grad_check(fn, inputs, 1e-5, 1e-6);
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst_op = 0.0;
  std::string worst_name;
  for (const auto& c : op_cases()) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const double err = c.run(seed);
      if (!(err <= worst_op)) {
        worst_op = err;
        worst_name = c.name;
      }
    }
  }
  const double model_err = full_model_grad_error();
  const double secs = seconds_since(t0);
  return {worst_op <= 1e-5 && model_err <= 1e-4 && secs < 120.0,
          "worst op " + worst_name + " " + fmt(worst_op) + ", full model " + fmt(model_err) + ", " + fmt(secs) + " s"};
}

// ---- criterion 3

Outcome mask_law() {
  const auto cfg = toy_config(8, 2, 16);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    model::ParamSet params = model::init_params(cfg, 500 + trial);
    model::Bound p(params, nullptr);
    const std::size_t h = 2 + trial % 4 * 2;
    const Var mask = model::attention_mask(constant(random_normal({6, 8, h, h}, 900 + trial, 2.0)), p,
                                           trial % 2 ? model::Mode::train : model::Mode::eval);
    const double half_n = double(h * h) / 2.0;
    const auto v = mask.value().data();
    for (std::size_t plane = 0; plane < 6 * 8; ++plane) {
      double s = 0.0;
      for (std::size_t i = 0; i < h * h; ++i) s += v[plane * h * h + i];
      worst = std::max(worst, std::abs(s - half_n) / half_n);
    }
  }
  return {worst <= 1e-10, "worst relative deviation of the spatial sum from N/2: " + fmt(worst)};
}

// ---- criterion 4

Outcome ffn_identity_and_scale() {
  model::ModelConfig cfg = toy_config(4, 1, 16);
  cfg.expansion = 1;
  model::ParamSet params = model::init_params(cfg, 14);
  for (const char* n : {"block0.ffn.up_w", "block0.ffn.down_w", "block0.ffn.w_re"}) {
    auto& t = params.tensors[n];
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = i / t.dim(1) == i % t.dim(1) ? 1.0 : 0.0;
  }
  for (const char* n : {"block0.ffn.up_b", "block0.ffn.down_b", "block0.ffn.w_im", "block0.ffn.b_re", "block0.ffn.b_im"}) {
    auto& t = params.tensors[n];
    std::fill(t.data().begin(), t.data().end(), 0.0);
  }
  model::Bound p(params, nullptr);
  double ffn_err = 0.0;
  for (std::size_t T : {16u, 17u, 160u, 301u}) {
    const Var x = constant(random_tensor({T, 4}, T));
    ffn_err = std::max(ffn_err, max_abs_diff(model::freq_ffn(x, p, "block0").value(), x.value()));
  }

  double scale_err = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    dsp::Wave g{std::vector<double>(160), 30.0};
    for (std::size_t n = 0; n < 160; ++n) g.samples[n] = std::sin(2.0 * std::numbers::pi * 1.5 * double(n) / 30.0);
    const Tensor noise = random_normal({160}, 40 + seed);
    const dsp::Wave pred{std::vector<double>(noise.data().begin(), noise.data().end()), 30.0};
    const double base = dsp::loss_freq(pred, g);
    for (double c : {0.1, 10.0}) {
      dsp::Wave scaled = pred;
      for (auto& v : scaled.samples) v *= c;
      scale_err = std::max(scale_err, std::abs(dsp::loss_freq(scaled, g) - base) / std::abs(base));
    }
  }
  return {ffn_err <= 1e-9 && scale_err <= 1e-6,
          "identity FFN Linf " + fmt(ffn_err) + ", loss_freq relative change under scaling " + fmt(scale_err)};
}

// ---- criterion 5

Outcome dsp_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int i = 0; i <= 8; ++i) {
    const double f = 0.8 + 0.2 * i;
    dsp::Wave w{std::vector<double>(300), 30.0};
    for (std::size_t n = 0; n < 300; ++n) w.samples[n] = std::sin(2.0 * std::numbers::pi * f * double(n) / 30.0 + 0.3 * i);
    const auto spec = dsp::welch_psd(dsp::butterworth_bandpass(w));
    worst = std::max(worst, std::abs(dsp::estimate_hr(spec).bpm - 60.0 * f));
  }
  const double secs = seconds_since(t0);
  return {worst <= 0.6 && secs < 5.0, "worst HR error " + fmt(worst) + " bpm over 0.8..2.4 Hz, " + fmt(secs) + " s"};
}

// ---- criteria 6 and 7

struct Trained {
  harness::RunConfig cfg;
  model::ParamSet params;
};

Outcome closed_loop(const std::filesystem::path& work, Trained& out) {
  const auto t0 = Clock::now();
  harness::RunConfig cfg = harness::RunConfig::load(std::filesystem::path(RHYTHM_CONFIG_DIR) / "closed_loop.conf");
  const std::string hash = harness::config_hash(cfg);
  synth::write_dataset(work / "data", cfg.synth.dataset(cfg.model.input_hw), hash);
  const auto trained = harness::train(cfg, work / "data", work / "run");
  const auto ckpt = model::load_checkpoint(trained.checkpoint);
  const auto model_eval = harness::evaluate(ckpt, work / "data");
  const auto green_eval = harness::evaluate(ckpt, work / "data", harness::Predictor::green);
  harness::write_eval_csv(work / "closed_loop_model.csv", hash, model_eval);
  const double secs = seconds_since(t0);
  out = {cfg, ckpt.params};
  const double mae = model_eval.metrics.mae, green = green_eval.metrics.mae;
  return {mae <= 3.0 && green <= 2.0 && secs <= 1800.0,
          "model MAE " + fmt(mae) + " bpm (RMSE " + fmt(model_eval.metrics.rmse) + ", rho " +
              fmt(model_eval.metrics.rho) + "), green baseline MAE " + fmt(green) + " bpm, " + fmt(secs) + " s"};
}

Outcome arbitrary_length(Trained& trained) {
  const auto& mcfg = trained.cfg.model;
  std::vector<std::pair<std::string, synth::VideoClip>> clips;
  synth::SceneSpec scene;
  scene.hw = mcfg.input_hw;
  scene.modulation_depth = trained.cfg.synth.modulation;
  scene.sensor_noise_std = trained.cfg.synth.noise;
  for (int i = 0; i < 10; ++i) {
    synth::PulseSpec ps;
    ps.hr_bpm = 55.0 + 8.0 * i;
    ps.duration_s = 20.0;  // 600 frames
    ps.hr_jitter_pct = 0.0;
    clips.emplace_back("stationary_" + std::to_string(i),
                       synth::gen_clip(synth::gen_pulse(ps, 7000 + i), ps.hr_bpm, scene, 8000 + i));
  }
  auto worst_spread = [&](harness::Predictor predictor) {
    std::vector<double> lo(clips.size(), 1e300), hi(clips.size(), -1e300);
    for (std::size_t T : {80u, 160u, 300u, 600u}) {
      const auto r = harness::evaluate_clips(clips, predictor, &trained.params, &mcfg, T);
      for (std::size_t i = 0; i < clips.size(); ++i) {
        lo[i] = std::min(lo[i], r.clips[i].pred_hr);
        hi[i] = std::max(hi[i], r.clips[i].pred_hr);
      }
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < clips.size(); ++i) worst = std::max(worst, hi[i] - lo[i]);
    return worst;
  };
  const double spread = worst_spread(harness::Predictor::model);
  // same readout applied to the clean ground-truth wave
  const double readout_spread = worst_spread(harness::Predictor::oracle);

  std::size_t failures = 0;
  std::vector<std::size_t> lengths{5, 6, 7, 8, 9, 10, 11, 12, 13, 17, 31, 59, 97, 161, 299, 601};
  for (std::size_t T : lengths) {
    try {
      synth::VideoClip c = clips[0].second;
      c.frames = Tensor({3, T, mcfg.input_hw, mcfg.input_hw});
      const std::size_t plane = mcfg.input_hw * mcfg.input_hw, full = clips[0].second.length();
      const std::size_t keep = std::min(T, full);
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t t = 0; t < T; ++t)
          std::copy_n(clips[0].second.frames.data().begin() + (ch * full + t % keep) * plane, plane,
                      c.frames.data().begin() + (ch * T + t) * plane);
      c.gt_wave.samples.resize(T);
      const auto r = harness::infer(trained.params, mcfg, c);
      if (r.wave.size() != T) ++failures;
      for (double v : r.wave.samples)
        if (!std::isfinite(v)) {
          ++failures;
          break;
        }
    } catch (const std::exception& e) {
      std::cerr << "  length " << T << ": " << e.what() << "\n";
      ++failures;
    }
  }
  return {spread <= 2.0 && failures == 0, "worst per-clip HR spread over T in {80,160,300,600}: " + fmt(spread) +
                                              " bpm (ground-truth wave through the same readout: " + fmt(readout_spread) + " bpm); " +
                                              std::to_string(failures) + " failures over " +
                                              std::to_string(lengths.size()) + " lengths from 5 to 601"};
}

// ---- criterion 8

Outcome linear_complexity(const std::filesystem::path& work) {
  harness::BenchConfig b;  // 1k..256k
  const auto r = harness::bench_scan(b);
  harness::write_bench_csv(work / "bench_scan.csv", "acceptance", r);
  const double slope = r.slopes.at("sequential");
  return {std::abs(slope - 1.0) <= 0.15, "sequential log-log slope " + fmt(slope) + " (parallel " +
                                             fmt(r.slopes.at("parallel")) + ", kernel " + fmt(r.slopes.at("kernel")) +
                                             ")"};
}

}  // namespace

int main() {
  const auto work = std::filesystem::temp_directory_path() / "rhythm_acceptance";
  std::filesystem::remove_all(work);
  std::filesystem::create_directories(work);

  Trained trained;
  bool have_model = false;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"scan equivalences", scan_equivalences},
      {"gradient suite", gradient_suite},
      {"attention mask sum", mask_law},
      {"frequency FFN identity and loss_freq scale invariance", ffn_identity_and_scale},
      {"DSP heart-rate oracle", dsp_oracle},
      {"closed-loop learning", [&] {
         Outcome o = closed_loop(work, trained);
         have_model = true;
         return o;
       }},
      {"arbitrary-length inference", [&] {
         if (!have_model) return Outcome{false, "no trained model"};
         return arbitrary_length(trained);
       }},
      {"linear-complexity scan", [&] { return linear_complexity(work); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
