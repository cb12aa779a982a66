#pragma once

#include <cstddef>
#include <vector>

#include "rhythm/autodiff.hpp"

// Differentiable operators. Layout conventions:
//   images    [N, C, H, W]   (N = clips x frames)
//   sequences [T, C]         (time-major, one clip)
//   spectra   [2, F, C]      (real plane, imaginary plane; F = T/2 + 1)
// Only scalar-with-tensor broadcasting exists; bias_add is the one explicit
// row broadcast.
namespace rhythm::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double value);
Var reshape(const Var& x, Shape shape);

Var relu(const Var& x);
Var silu(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
Var log(const Var& x);
Var square(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);

// [m, k] x [k, n] -> [m, n]
Var matmul(const Var& a, const Var& b);
// x [r, c] + b [c] on every row
Var bias_add(const Var& x, const Var& bias);
// x [T, Cin] W [Cin, Cout] + b [Cout]
Var linear(const Var& x, const Var& weight, const Var& bias);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// x [N, Ci, H, W], weight [Co, Ci, k, k], bias [Co] -> [N, Co, Ho, Wo],
// Ho = (H + 2p - k) / s + 1.
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opts = {});

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Per-channel statistics over (N, H, W). Train mode normalises with batch
// statistics and updates state; eval mode uses the running statistics.
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
                bool train);

// Non-overlapping k x k max pooling; H and W must be divisible by k.
Var maxpool2d(const Var& x, std::size_t k = 2);
// [N, C, H, W] -> [N, C]
Var global_avgpool_spatial(const Var& x);
// scale * x / sum_{h,w} |x| for each (n, c) plane.
Var l1_normalize_spatial(const Var& x, double scale);

// Causal depthwise convolution along time: x [T, C], weight [C, K], bias [C].
// y[t, c] = b[c] + sum_j w[c, j] x[t - (K - 1) + j, c], zero history.
Var depthwise_conv1d(const Var& x, const Var& weight, const Var& bias);

// One-sided DFT along time; works for odd and even T.
Var rfft_time(const Var& x);
// Inverse of rfft_time for a real series of the given length. The imaginary
// parts of the DC bin (and of the Nyquist bin for even length) are ignored.
Var irfft_time(const Var& spectrum, std::size_t length);
// Complex channel mixing with weights shared across bins:
//   re' = re Wre - im Wim + Bre,  im' = re Wim + im Wre + Bim.
Var complex_linear(const Var& spectrum, const Var& w_re, const Var& w_im, const Var& b_re,
                   const Var& b_im);

// Row-wise normalisation over channels of x [T, C].
Var layernorm_channels(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Rows [begin, end) of x (time axis 0).
Var slice_time(const Var& x, std::size_t begin, std::size_t end);
Var concat_time(const std::vector<Var>& parts);
// Extends x along time to `length` rows by repeating the last row.
Var pad_time_replicate(const Var& x, std::size_t length);

// (x - mean) / sqrt(var + eps) over all elements.
Var standardize(const Var& x, double eps = 1e-8);

}  // namespace rhythm::ops
