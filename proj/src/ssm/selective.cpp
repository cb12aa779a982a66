#include <cmath>
#include <string>

#include "rhythm/error.hpp"
#include "rhythm/ops.hpp"
#include "rhythm/ssm.hpp"

namespace rhythm::ssm {
namespace {

// d b_bar / d a for b_bar = b expm1(z) / a, z = delta a:
//   b (z e^z - expm1(z)) / a^2, with the bracket expanded near z = 0.
double dbbar_da(double a, double b, double delta, double a_bar) {
  const double z = delta * a;
  if (std::abs(z) < kZohSeriesThreshold) return 0.0;
  double bracket;
  if (std::abs(z) < 1e-3) {
    const double z2 = z * z;
    bracket = z2 * (0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z / 30.0)));
  } else {
    bracket = z * a_bar - std::expm1(z);
  }
  return b * bracket / (a * a);
}

}  // namespace

double inverse_softplus(double y) {
  if (!(y > 0.0)) throw NumericError("inverse_softplus: argument must be positive");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

SelectiveParams selective_params(const Var& x, const SelectiveProjection& proj) {
  return {ops::softplus(ops::linear(x, proj.w_delta, proj.b_delta)), ops::matmul(x, proj.w_b),
          ops::matmul(x, proj.w_c)};
}

Var selective_scan(const Var& u, const Var& delta, const Var& a_log, const Var& b, const Var& c,
                   const Var& d, ScanMode mode, ScanOptions opts) {
  if (u.value().rank() != 2) throw ShapeError("selective_scan: u must be [T, D]");
  const std::size_t T = u.dim(0), D = u.dim(1);
  if (delta.shape() != u.shape()) throw ShapeError("selective_scan: delta must match u");
  if (a_log.value().rank() != 2 || a_log.dim(0) != D) throw ShapeError("selective_scan: a_log must be [D, N]");
  const std::size_t N = a_log.dim(1);
  if (b.shape() != Shape{T, N} || c.shape() != Shape{T, N}) {
    throw ShapeError("selective_scan: B and C must be [T, N]");
  }
  if (d.value().numel() != D) throw ShapeError("selective_scan: D must have one entry per channel");
  if (T == 0) throw ShapeError("selective_scan: empty sequence");

  const Tensor& uv = u.value();
  const Tensor& dv = delta.value();
  const Tensor& bv = b.value();
  const Tensor& cv = c.value();

  // Saved per channel: a_bar, b_bar [T, N] and states h [T, N].
  std::vector<double> a_bar(D * T * N), b_bar(D * T * N), states(D * T * N);
  Tensor out({T, D});
  std::vector<double> lane_a(T * N), lane_u(T * N);
  for (std::size_t ch = 0; ch < D; ++ch) {
    for (std::size_t n = 0; n < N; ++n) {
      const double A = -std::exp(a_log.value().at(ch, n));
      for (std::size_t t = 0; t < T; ++t) {
        const double dt = dv.at(t, ch);
        if (!(dt > 0.0)) throw NumericError("selective_scan: non-positive delta at timestep " + std::to_string(t));
        const auto z = zoh(A, bv.at(t, n), dt);
        lane_a[t * N + n] = z.a_bar;
        lane_u[t * N + n] = z.b_bar * uv.at(t, ch);
        b_bar[(ch * T + t) * N + n] = z.b_bar;
      }
    }
    const auto h = mode == ScanMode::parallel ? lane_scan_parallel(lane_a, lane_u, T, N, opts)
                                              : lane_scan_sequential(lane_a, lane_u, T, N);
    std::copy(lane_a.begin(), lane_a.end(), a_bar.begin() + static_cast<long>(ch * T * N));
    std::copy(h.begin(), h.end(), states.begin() + static_cast<long>(ch * T * N));
    for (std::size_t t = 0; t < T; ++t) {
      double acc = d.value()[ch] * uv.at(t, ch);
      for (std::size_t n = 0; n < N; ++n) acc += cv.at(t, n) * h[t * N + n];
      out.at(t, ch) = acc;
    }
  }

  return record_op("selective_scan", std::move(out), {u, delta, a_log, b, c, d},
                   [T, D, N, a_bar = std::move(a_bar), b_bar = std::move(b_bar),
                    states = std::move(states)](Node& node) {
    const Tensor& uv = node.in(0);
    const Tensor& dv = node.in(1);
    const Tensor& alog = node.in(2);
    const Tensor& bv = node.in(3);
    const Tensor& cv = node.in(4);
    const Tensor& skip = node.in(5);
    Tensor* gu = node.grad_of(0);
    Tensor* gdelta = node.grad_of(1);
    Tensor* galog = node.grad_of(2);
    Tensor* gb = node.grad_of(3);
    Tensor* gc = node.grad_of(4);
    Tensor* gd = node.grad_of(5);

    std::vector<double> carry(N), gA(N);
    for (std::size_t ch = 0; ch < D; ++ch) {
      const double* ab = a_bar.data() + ch * T * N;
      const double* bb = b_bar.data() + ch * T * N;
      const double* h = states.data() + ch * T * N;
      std::fill(carry.begin(), carry.end(), 0.0);
      std::fill(gA.begin(), gA.end(), 0.0);
      for (std::size_t tt = T; tt-- > 0;) {
        const double gy = node.grad.at(tt, ch);
        const double x = uv.at(tt, ch);
        const double dt = dv.at(tt, ch);
        if (gu) gu->at(tt, ch) += gy * skip[ch];
        if (gd) (*gd)[ch] += gy * x;
        double g_dt = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t i = tt * N + n;
          const double gh = gy * cv.at(tt, n) + carry[n];
          if (gc) gc->at(tt, n) += gy * h[i];
          const double prev = tt ? h[i - N] : 0.0;
          const double g_abar = gh * prev;
          const double g_bbar = gh * x;
          if (gu) gu->at(tt, ch) += gh * bb[i];
          const double A = -std::exp(alog.at(ch, n));
          const double B = bv.at(tt, n);
          const bool series = std::abs(dt * A) < kZohSeriesThreshold;
          // a_bar = exp(dt A); b_bar = B expm1(dt A) / A
          g_dt += g_abar * ab[i] * A + g_bbar * (series ? B : B * ab[i]);
          gA[n] += g_abar * ab[i] * dt + g_bbar * dbbar_da(A, B, dt, ab[i]);
          if (gb) gb->at(tt, n) += g_bbar * (series ? dt : std::expm1(dt * A) / A);
          carry[n] = gh * ab[i];
        }
        if (gdelta) gdelta->at(tt, ch) += g_dt;
      }
      if (galog) {
        for (std::size_t n = 0; n < N; ++n) galog->at(ch, n) += gA[n] * (-std::exp(alog.at(ch, n)));
      }
    }
  });
}

}  // namespace rhythm::ssm
