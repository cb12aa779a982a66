#include <algorithm>

#include "rhythm/error.hpp"
#include "rhythm/model.hpp"

namespace rhythm::model {
namespace {

void check_frames(const Tensor& frames) {
  if (frames.rank() != 4 || frames.dim(1) != 3) {
    throw ShapeError("model: frames must be [T, 3, H, W], got " + shape_str(frames.shape()));
  }
  if (frames.dim(0) < 5) throw ShapeError("model: need at least 5 frames, got " + std::to_string(frames.dim(0)));
  if (frames.dim(2) % 8 != 0 || frames.dim(3) % 8 != 0 || frames.dim(2) == 0 || frames.dim(3) == 0) {
    throw ShapeError("model: frame height and width must be positive multiples of 8, got " +
                     shape_str(frames.shape()));
  }
}

Var zero_bias(std::size_t n) { return constant(Tensor::zeros({n})); }

// conv (no bias) -> batch norm
Var conv_bn(const Var& x, Bound& p, const std::string& name, ops::Conv2dOptions opts, Mode mode) {
  const Var& w = p[name + ".w"];
  Var y = ops::conv2d(x, w, zero_bias(w.dim(0)), opts);
  return ops::batchnorm2d(y, p[name + ".gamma"], p[name + ".beta"], p.bn(name), mode == Mode::train);
}

// Stem1: conv7 stride 2 -> BN -> ReLU -> maxpool 2
Var stem1(const Var& x, Bound& p, const std::string& name, Mode mode) {
  return ops::maxpool2d(ops::relu(conv_bn(x, p, name, {.stride = 2, .padding = 3}, mode)), 2);
}

// Stem2: conv7 -> BN -> ReLU -> maxpool 2
Var stem2(const Var& x, Bound& p, const std::string& name, Mode mode) {
  return ops::maxpool2d(ops::relu(conv_bn(x, p, name, {.stride = 1, .padding = 3}, mode)), 2);
}

Var norm(const Var& x, Bound& p, const std::string& name) {
  return ops::layernorm_channels(x, p[name + ".gamma"], p[name + ".beta"]);
}

}  // namespace

Tensor frame_differences(const Tensor& frames) {
  check_frames(frames);
  const std::size_t T = frames.dim(0), plane = 3 * frames.dim(2) * frames.dim(3);
  Tensor out({T, 12, frames.dim(2), frames.dim(3)});
  const auto src = frames.data();
  auto dst = out.data();
  auto frame = [&](long t) { return src.data() + std::clamp<long>(t, 0, long(T) - 1) * long(plane); };
  constexpr int offsets[4] = {-2, -1, 1, 2};
  for (std::size_t t = 0; t < T; ++t) {
    for (int j = 0; j < 4; ++j) {
      const int k = offsets[j];
      const double* a = frame(long(t) + k);
      const double* b = frame(long(t) + k - (k > 0 ? 1 : -1));
      double* d = dst.data() + (t * 4 + j) * plane;
      for (std::size_t i = 0; i < plane; ++i) d[i] = a[i] - b[i];
    }
  }
  return out;
}

FusionOutput diff_fusion(const Tensor& frames, Bound& p, Mode mode) {
  check_frames(frames);
  FusionOutput f;
  f.x_raw = stem1(constant(frames), p, "stem1_raw", mode);
  f.x_diff = stem1(constant(frame_differences(frames)), p, "stem1_diff", mode);
  f.x_fusion = ops::add(stem2(ops::add(f.x_raw, f.x_diff), p, "stem2_fused", mode),
                        stem2(f.x_diff, p, "stem2_diff", mode));
  return f;
}

Var attention_mask(const Var& x_fusion, Bound& p, Mode mode) {
  Var s = ops::sigmoid(conv_bn(x_fusion, p, "stem3", {.stride = 1, .padding = 2}, mode));
  const double n = static_cast<double>(x_fusion.dim(2) * x_fusion.dim(3));
  return ops::l1_normalize_spatial(s, n / 2.0);
}

Var frame_stem(const Tensor& frames, Bound& p, Mode mode) {
  const Var x = diff_fusion(frames, p, mode).x_fusion;
  return ops::global_avgpool_spatial(ops::mul(x, attention_mask(x, p, mode)));
}

std::vector<std::vector<std::pair<std::size_t, std::size_t>>> path_slices(std::size_t T) {
  if (T == 0 || T % 4 != 0) throw ShapeError("mtc_mamba: sequence length " + std::to_string(T) + " is not divisible by 4");
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> paths;
  for (std::size_t parts : {1u, 2u, 4u}) {
    const std::size_t len = T / parts;
    auto& path = paths.emplace_back();
    for (std::size_t s = 0; s < parts; ++s) path.emplace_back(s * len, (s + 1) * len);
  }
  return paths;
}

Var mtc_mamba(const Var& x, Bound& p, const std::string& prefix, const ForwardOptions& opts) {
  const auto paths = path_slices(x.dim(0));
  const std::string m = prefix + ".mtc.";
  const Var u = ops::linear(x, p[m + "in_w"], p[m + "in_b"]);
  const Var gate = ops::silu(ops::linear(x, p[m + "gate_w"], p[m + "gate_b"]));
  const ssm::SelectiveProjection proj{p[m + "delta_w"], p[m + "delta_b"], p[m + "b_w"], p[m + "c_w"]};

  Var total;
  for (const auto& path : paths) {
    std::vector<Var> pieces;
    for (const auto& [begin, end] : path) {
      // fresh conv history and SSM state per slice
      Var h = ops::silu(ops::depthwise_conv1d(ops::slice_time(u, begin, end), p[m + "conv_w"], p[m + "conv_b"]));
      const auto sp = ssm::selective_params(h, proj);
      pieces.push_back(ssm::selective_scan(h, sp.delta, p[m + "a_log"], sp.b, sp.c, p[m + "d"], opts.scan,
                                           opts.scan_opts));
    }
    Var joined = pieces.size() == 1 ? pieces.front() : ops::concat_time(pieces);
    total = total.valid() ? ops::add(total, joined) : joined;
  }
  return ops::matmul(ops::mul(total, gate), p[m + "out_w"]);
}

Var freq_ffn(const Var& x, Bound& p, const std::string& prefix) {
  const std::string f = prefix + ".ffn.";
  const std::size_t T = x.dim(0);
  Var h = ops::linear(x, p[f + "up_w"], p[f + "up_b"]);
  Var spec = ops::complex_linear(ops::rfft_time(h), p[f + "w_re"], p[f + "w_im"], p[f + "b_re"], p[f + "b_im"]);
  return ops::linear(ops::irfft_time(spec, T), p[f + "down_w"], p[f + "down_b"]);
}

Var predictor_head(const Var& x, Bound& p) {
  Var y = ops::linear(x, p["head.w"], p["head.b"]);
  return ops::standardize(ops::reshape(y, {x.dim(0)}));
}

Var blocks_forward(const Var& x, Bound& p, const ModelConfig& cfg, const ForwardOptions& opts) {
  const std::size_t T = x.dim(0);
  Var h = x;
  if (T % 4 != 0) {
    if (opts.mode == Mode::train) {
      throw ShapeError("model: training sequence length " + std::to_string(T) + " is not divisible by 4");
    }
    h = ops::pad_time_replicate(h, (T + 3) / 4 * 4);
  }
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const std::string prefix = "block" + std::to_string(b);
    h = norm(ops::add(h, mtc_mamba(h, p, prefix, opts)), p, prefix + ".norm1");
    h = norm(ops::add(h, freq_ffn(h, p, prefix)), p, prefix + ".norm2");
  }
  return h.dim(0) == T ? h : ops::slice_time(h, 0, T);
}

Var model_forward(const Tensor& frames, Bound& p, const ModelConfig& cfg, const ForwardOptions& opts) {
  return predictor_head(blocks_forward(frame_stem(frames, p, opts.mode), p, cfg, opts), p);
}

std::vector<double> predict(const Tensor& frames, ParamSet& params, const ModelConfig& cfg) {
  Bound p(params, nullptr);
  const Var y = model_forward(frames, p, cfg, {.mode = Mode::eval});
  return {y.value().data().begin(), y.value().data().end()};
}

}  // namespace rhythm::model
