#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rhythm/autodiff.hpp"

// State-space sequence engine. Evolution matrices are diagonal, so every
// state lane evolves independently:
//   h_t = Abar h_{t-1} + Bbar x_t,   y_t = C h_t + D x_t,   h_{-1} = 0.
namespace rhythm::ssm {

// Continuous single-channel SSM with diagonal A (all entries < 0).
struct SsmParams {
  std::vector<double> a;  // diag(A), length N
  std::vector<double> b;  // length N
  std::vector<double> c;  // length N
  double d = 0.0;         // skip coefficient
};

struct DiscreteSsm {
  std::vector<double> a_bar;
  std::vector<double> b_bar;
};

// |delta * a| below this uses the first-order limit b_bar = delta * b.
inline constexpr double kZohSeriesThreshold = 1e-12;

struct ZohCoefficients {
  double a_bar;
  double b_bar;
};

// Closed-form zero-order hold for one diagonal entry:
//   a_bar = exp(delta a),  b_bar = (exp(delta a) - 1) / a * b.
ZohCoefficients zoh(double a, double b, double delta);

DiscreteSsm discretize_zoh(const SsmParams& params, double delta);

// Exact recurrence for time-invariant parameters.
std::vector<double> scan_sequential(const DiscreteSsm& disc, std::span<const double> c,
                                    std::span<const double> x, double d = 0.0);

// K = (C Bbar, C Abar Bbar, ..., C Abar^{L-1} Bbar)
std::vector<double> ssm_kernel(const DiscreteSsm& disc, std::span<const double> c, std::size_t length);
// Causal convolution y_t = sum_{j <= t} K_j x_{t-j}; O(L^2).
std::vector<double> apply_kernel(std::span<const double> kernel, std::span<const double> x);

// Time-varying (selective) parameters for one channel, row-major [L, N].
struct SelectiveSsm {
  std::size_t length = 0;
  std::size_t state = 0;
  std::vector<double> a_bar;
  std::vector<double> b_bar;
  std::vector<double> c;
  double d = 0.0;
};

// Element of the first-order linear recurrence monoid: h -> a h + b.
struct ScanElement {
  double a = 1.0;
  double b = 0.0;
};

// Apply `earlier` then `later`: (a2, b2) o (a1, b1) = (a2 a1, a2 b1 + b2).
inline ScanElement combine(const ScanElement& later, const ScanElement& earlier) {
  return {later.a * earlier.a, later.a * earlier.b + later.b};
}

struct ScanOptions {
  std::size_t chunk = 64;
  std::size_t workers = 1;
};

// Hidden states h [L, N] for the lanes h_t = a_t h_{t-1} + u_t (u already
// includes Bbar x). Throws NumericError naming the first bad timestep.
std::vector<double> lane_scan_sequential(std::span<const double> a, std::span<const double> u,
                                         std::size_t length, std::size_t state);
// Same result via chunked two-pass scan with an up-sweep/down-sweep tree
// over chunk aggregates. Output is independent of the worker count.
std::vector<double> lane_scan_parallel(std::span<const double> a, std::span<const double> u,
                                       std::size_t length, std::size_t state, ScanOptions opts);

std::vector<double> scan_sequential(const SelectiveSsm& ssm, std::span<const double> x);
std::vector<double> scan_parallel(const SelectiveSsm& ssm, std::span<const double> x,
                                  ScanOptions opts = {});

// Exclusive prefix of `elems` under combine, computed by the Blelloch
// up-sweep/down-sweep tree. Exposed for testing.
std::vector<ScanElement> exclusive_tree_scan(std::vector<ScanElement> elems);

// ---------------------------------------------------------------------------
// Differentiable selective path used by the model.

struct SelectiveProjection {
  Var w_delta;  // [D, D]
  Var b_delta;  // [D]
  Var w_b;      // [D, N]
  Var w_c;      // [D, N]
};

struct SelectiveParams {
  Var delta;  // [T, D], softplus(x W + b) > 0
  Var b;      // [T, N]
  Var c;      // [T, N]
};

SelectiveParams selective_params(const Var& x, const SelectiveProjection& proj);

enum class ScanMode { sequential, parallel };

// y[t, d] = sum_n C[t, n] h[t, d, n] + D[d] u[t, d] with
// A[d, n] = -exp(a_log[d, n]), discretised per (t, d, n) by ZOH with
// delta[t, d] and B[t, n]. State starts at zero.
Var selective_scan(const Var& u, const Var& delta, const Var& a_log, const Var& b, const Var& c,
                   const Var& d, ScanMode mode = ScanMode::parallel, ScanOptions opts = {});

// softplus^{-1}(y) = log(expm1(y)); used to initialise the delta bias.
double inverse_softplus(double y);

}  // namespace rhythm::ssm
