#include <algorithm>
#include <cmath>
#include <numbers>

#include "rhythm/dsp.hpp"
#include "rhythm/error.hpp"
#include "rhythm/ops.hpp"
#include "welch_detail.hpp"

namespace rhythm::dsp {
namespace {

struct Centered {
  std::vector<double> v;
  double var = 0.0;  // population variance
};

Centered center(std::span<const double> x) {
  Centered c{{x.begin(), x.end()}, 0.0};
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  for (double& v : c.v) {
    v -= m;
    c.var += v * v;
  }
  c.var /= static_cast<double>(x.size());
  return c;
}

std::vector<std::size_t> band_bins(std::size_t nfft, double fs, const Band& band) {
  std::vector<std::size_t> bins;
  for (std::size_t k = 0; k <= nfft / 2; ++k) {
    const double f = static_cast<double>(k) * fs / static_cast<double>(nfft);
    if (f >= band.lo && f <= band.hi) bins.push_back(k);
  }
  if (bins.size() < 2) throw ConfigError("loss_freq: band contains fewer than two spectrum bins");
  return bins;
}

// Cross-entropy of log-power logits; optionally writes dCE/dP.
double log_power_ce(std::span<const double> power, std::size_t target, std::vector<double>* grad) {
  std::vector<double> logits(power.size());
  for (std::size_t k = 0; k < power.size(); ++k) logits[k] = std::log(power[k] + kLogPowerEps);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double lse = mx + std::log(z);
  if (grad) {
    grad->resize(power.size());
    for (std::size_t k = 0; k < power.size(); ++k) {
      const double soft = std::exp(logits[k] - lse);
      (*grad)[k] = (soft - (k == target ? 1.0 : 0.0)) / (power[k] + kLogPowerEps);
    }
  }
  return lse - logits[target];
}

std::size_t gt_target(std::span<const double> gt, double fs, const WelchConfig& welch,
                      const std::vector<std::size_t>& bins) {
  const auto spec = welch_psd(Wave{{gt.begin(), gt.end()}, fs}, welch);
  std::size_t best = 0;
  for (std::size_t i = 1; i < bins.size(); ++i)
    if (spec.power[bins[i]] > spec.power[bins[best]]) best = i;
  return best;
}

}  // namespace

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("pearson: length mismatch");
  if (a.empty()) throw ShapeError("pearson: empty input");
  const auto ca = center(a), cb = center(b);
  double cov = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) cov += ca.v[i] * cb.v[i];
  cov /= static_cast<double>(a.size());
  const double den = std::sqrt(ca.var * cb.var);
  if (den < kPearsonEps) return 0.0;
  return std::clamp(cov / den, -1.0, 1.0);
}

double loss_time(const Wave& pred, const Wave& gt) {
  if (pred.size() != gt.size()) throw ShapeError("loss_time: length mismatch");
  return 1.0 - pearson(pred.samples, gt.samples);
}

double loss_freq(const Wave& pred, const Wave& gt, const LossConfig& cfg, const WelchConfig& welch) {
  if (pred.fs != gt.fs) throw ShapeError("loss_freq: sampling rates differ");
  const auto sp = welch_psd(pred, welch), sg = welch_psd(gt, welch);
  const std::size_t nfft = welch_nfft(std::min(welch.segment, pred.size()), pred.fs, welch.max_bin_width);
  const auto bins = band_bins(nfft, pred.fs, cfg.hr_band);
  std::vector<double> pp(bins.size());
  std::size_t target = 0;
  for (std::size_t i = 0; i < bins.size(); ++i) {
    pp[i] = sp.power[bins[i]];
    if (sg.power[bins[i]] > sg.power[bins[target]]) target = i;
  }
  return log_power_ce(pp, target, nullptr);
}

double loss_overall(const Wave& pred, const Wave& gt, const LossConfig& cfg, const WelchConfig& welch) {
  return cfg.a * loss_time(pred, gt) + cfg.b * loss_freq(pred, gt, cfg, welch);
}

Var loss_time(const Var& pred, std::span<const double> gt) {
  const std::size_t T = pred.value().numel();
  if (T != gt.size()) throw ShapeError("loss_time: length mismatch");
  if (T < 2) throw ShapeError("loss_time: need at least two samples");
  const auto ca = center(pred.value().data()), cb = center(gt);
  double cov = 0.0;
  for (std::size_t i = 0; i < T; ++i) cov += ca.v[i] * cb.v[i];
  cov /= static_cast<double>(T);
  const double den = std::sqrt(ca.var * cb.var);
  const bool guarded = den < kPearsonEps;
  const double rho = guarded ? 0.0 : cov / den;

  return record_op("loss_time", Tensor::scalar(1.0 - rho), {pred},
                   [=, a = ca.v, b = cb.v, va = ca.var](Node& node) {
    Tensor* g = node.grad_of(0);
    if (!g || guarded) return;
    const double up = node.grad[0] / static_cast<double>(T);
    for (std::size_t i = 0; i < T; ++i) (*g)[i] -= up * (b[i] / den - rho * a[i] / va);
  });
}

Var loss_freq(const Var& pred, std::span<const double> gt, double fs, const LossConfig& cfg,
              const WelchConfig& welch) {
  const std::size_t T = pred.value().numel();
  if (T != gt.size()) throw ShapeError("loss_freq: length mismatch");
  auto layout = detail::welch_layout(T, fs, welch);
  const auto bins = band_bins(layout.nfft, fs, cfg.hr_band);
  const std::size_t K = bins.size(), L = layout.segment;
  const std::size_t target = gt_target(gt, fs, welch, bins);

  // Band-only DFT tables [K, L].
  std::vector<double> cosv(K * L), sinv(K * L);
  for (std::size_t k = 0; k < K; ++k) {
    const double w = 2.0 * std::numbers::pi * static_cast<double>(bins[k]) / static_cast<double>(layout.nfft);
    for (std::size_t n = 0; n < L; ++n) {
      cosv[k * L + n] = std::cos(w * static_cast<double>(n));
      sinv[k * L + n] = std::sin(w * static_cast<double>(n));
    }
  }

  const double norm = 2.0 * layout.scale / static_cast<double>(layout.count);
  const auto x = pred.value().data();
  std::vector<double> re(layout.count * K), im(layout.count * K), power(K, 0.0), z(L);
  for (std::size_t s = 0; s < layout.count; ++s) {
    std::copy_n(x.begin() + static_cast<long>(s * layout.step), L, z.begin());
    detail::detrend_linear(z);
    for (std::size_t n = 0; n < L; ++n) z[n] *= layout.window[n];
    for (std::size_t k = 0; k < K; ++k) {
      double r = 0.0, i = 0.0;
      for (std::size_t n = 0; n < L; ++n) {
        r += z[n] * cosv[k * L + n];
        i -= z[n] * sinv[k * L + n];
      }
      re[s * K + k] = r;
      im[s * K + k] = i;
      power[k] += norm * (r * r + i * i);
    }
  }
  std::vector<double> dpower;
  const double ce = log_power_ce(power, target, &dpower);

  return record_op("loss_freq", Tensor::scalar(ce), {pred},
                   [=, layout = std::move(layout), cosv = std::move(cosv), sinv = std::move(sinv),
                    re = std::move(re), im = std::move(im), dpower = std::move(dpower)](Node& node) {
    Tensor* g = node.grad_of(0);
    if (!g) return;
    const double up = node.grad[0];
    std::vector<double> gz(L);
    for (std::size_t s = 0; s < layout.count; ++s) {
      std::fill(gz.begin(), gz.end(), 0.0);
      for (std::size_t k = 0; k < K; ++k) {
        const double c = up * dpower[k] * norm * 2.0;
        const double r = re[s * K + k], i = im[s * K + k];
        for (std::size_t n = 0; n < L; ++n) gz[n] += c * (r * cosv[k * L + n] - i * sinv[k * L + n]);
      }
      for (std::size_t n = 0; n < L; ++n) gz[n] *= layout.window[n];
      detail::detrend_linear(gz);  // the detrend projection is symmetric
      for (std::size_t n = 0; n < L; ++n) (*g)[s * layout.step + n] += gz[n];
    }
  });
}

Var loss_overall(const Var& pred, std::span<const double> gt, double fs, const LossConfig& cfg,
                 const WelchConfig& welch) {
  return ops::add(ops::scale(loss_time(pred, gt), cfg.a), ops::scale(loss_freq(pred, gt, fs, cfg, welch), cfg.b));
}

}  // namespace rhythm::dsp
