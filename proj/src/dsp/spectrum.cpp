#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>

#include "rhythm/dsp.hpp"
#include "rhythm/error.hpp"
#include "rhythm/fft.hpp"
#include "welch_detail.hpp"

namespace rhythm::dsp {

namespace detail {

std::vector<double> hamming_periodic(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

void detrend_linear(std::span<double> x) {
  const std::size_t n = x.size();
  if (n < 2) {
    if (n == 1) x[0] = 0.0;
    return;
  }
  const double tm = 0.5 * static_cast<double>(n - 1);
  double xm = 0.0;
  for (double v : x) xm += v;
  xm /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = static_cast<double>(i) - tm;
    sxy += dt * (x[i] - xm);
    sxx += dt * dt;
  }
  const double slope = sxy / sxx;
  for (std::size_t i = 0; i < n; ++i) x[i] -= xm + slope * (static_cast<double>(i) - tm);
}

WelchLayout welch_layout(std::size_t length, double fs, const WelchConfig& cfg) {
  if (!(fs > 0.0)) throw ShapeError("welch: sampling rate must be positive");
  if (length < 2) throw ShapeError("welch: need at least two samples");
  if (cfg.segment < 2) throw ConfigError("welch: segment must be at least 2");
  if (!(cfg.overlap >= 0.0 && cfg.overlap < 1.0)) throw ConfigError("welch: overlap must be in [0, 1)");
  WelchLayout l;
  l.segment = std::min(cfg.segment, length);
  const auto overlap = static_cast<std::size_t>(std::floor(cfg.overlap * static_cast<double>(l.segment)));
  l.step = l.segment - overlap;
  l.count = (length - l.segment) / l.step + 1;
  l.nfft = welch_nfft(l.segment, fs, cfg.max_bin_width);
  l.window = hamming_periodic(l.segment);
  double wss = 0.0;
  for (double v : l.window) wss += v * v;
  l.scale = 1.0 / (fs * wss);
  return l;
}

}  // namespace detail

std::size_t welch_nfft(std::size_t segment, double fs, double max_bin_width) {
  if (!(max_bin_width > 0.0)) throw ConfigError("welch: max_bin_width must be positive");
  std::size_t n = 1;
  while (n < segment || fs / static_cast<double>(n) > max_bin_width) n <<= 1;
  return n;
}

SpectrumEstimate welch_psd(const Wave& w, const WelchConfig& cfg) {
  w.validate();
  const auto l = detail::welch_layout(w.size(), w.fs, cfg);
  const std::size_t F = l.nfft / 2 + 1;
  SpectrumEstimate out;
  out.bin_width = w.fs / static_cast<double>(l.nfft);
  out.freqs.resize(F);
  out.power.assign(F, 0.0);
  for (std::size_t k = 0; k < F; ++k) out.freqs[k] = static_cast<double>(k) * out.bin_width;

  std::vector<double> seg(l.segment);
  for (std::size_t s = 0; s < l.count; ++s) {
    std::copy_n(w.samples.begin() + static_cast<long>(s * l.step), l.segment, seg.begin());
    detail::detrend_linear(seg);
    for (std::size_t i = 0; i < l.segment; ++i) seg[i] *= l.window[i];
    const auto spec = fft::rfft(seg, l.nfft);
    for (std::size_t k = 0; k < F; ++k) out.power[k] += std::norm(spec[k]);
  }
  const double norm = l.scale / static_cast<double>(l.count);
  for (std::size_t k = 0; k < F; ++k) {
    const bool edge = k == 0 || (l.nfft % 2 == 0 && k == F - 1);
    out.power[k] *= norm * (edge ? 1.0 : 2.0);
  }
  return out;
}

SpectrumEstimate periodogram(const Wave& w, double max_bin_width) {
  return welch_psd(w, WelchConfig{.segment = std::max<std::size_t>(w.size(), 2), .overlap = 0.0,
                                  .max_bin_width = max_bin_width});
}

HrEstimate estimate_hr(const SpectrumEstimate& spec, const Band& band) {
  std::size_t best = spec.freqs.size(), first = spec.freqs.size(), last = 0;
  double outside = 0.0;
  for (std::size_t k = 0; k < spec.freqs.size(); ++k) {
    const double f = spec.freqs[k];
    if (f >= band.lo && f <= band.hi) {
      if (first == spec.freqs.size()) first = k;
      last = k;
      if (best == spec.freqs.size() || spec.power[k] > spec.power[best]) best = k;
    } else if (f > 0.0) {
      outside = std::max(outside, spec.power[k]);
    }
  }
  if (best == spec.freqs.size()) throw ConfigError("estimate_hr: no spectrum bins inside the band");
  HrEstimate hr;
  hr.bpm = 60.0 * spec.freqs[best];
  hr.low_confidence = outside > spec.power[best] || (first != last && (best == first || best == last));
  return hr;
}

HrEstimate wave_hr(const Wave& w, const WelchConfig& cfg, const Band& band) {
  return estimate_hr(welch_psd(butterworth_bandpass(w, band.lo, band.hi), cfg), band);
}

double snr_db(const Wave& w, double hr_bpm, const Band& band) {
  const auto spec = periodogram(w);
  const double f0 = hr_bpm / 60.0, half_width = 0.1;
  double signal = 0.0, noise = 0.0;
  for (std::size_t k = 0; k < spec.freqs.size(); ++k) {
    const double f = spec.freqs[k];
    const bool near = std::abs(f - f0) <= half_width || std::abs(f - 2.0 * f0) <= half_width;
    if (near) {
      signal += spec.power[k];
    } else if (f >= band.lo && f <= band.hi) {
      noise += spec.power[k];
    }
  }
  constexpr double guard = 1e-20;
  return 10.0 * std::log10((signal + guard) / (noise + guard));
}

namespace {

bool all_equal(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

}  // namespace

Metrics metrics(std::span<const double> pred_hrs, std::span<const double> gt_hrs,
                std::span<const Wave> pred_waves, std::span<const Wave> gt_waves) {
  if (pred_hrs.empty()) throw ShapeError("metrics: empty lists");
  if (pred_hrs.size() != gt_hrs.size()) throw ShapeError("metrics: HR lists differ in length");
  if (!pred_waves.empty() && pred_waves.size() != pred_hrs.size()) {
    throw ShapeError("metrics: wave list does not match HR list");
  }
  if (!gt_waves.empty() && gt_waves.size() != pred_waves.size()) {
    throw ShapeError("metrics: prediction and ground-truth wave lists differ in length");
  }
  const auto n = static_cast<double>(pred_hrs.size());
  Metrics m;
  for (std::size_t i = 0; i < pred_hrs.size(); ++i) {
    const double e = pred_hrs[i] - gt_hrs[i];
    m.mae += std::abs(e);
    m.rmse += e * e;
    m.mape += std::abs(e) / std::abs(gt_hrs[i]);
  }
  m.mae /= n;
  m.rmse = std::sqrt(m.rmse / n);
  m.mape *= 100.0 / n;

  const bool pc = all_equal(pred_hrs), gc = all_equal(gt_hrs);
  if (pc && gc && pred_hrs.front() == gt_hrs.front()) {
    m.rho = 1.0;
  } else if (pc || gc) {
    m.rho = std::numeric_limits<double>::quiet_NaN();
  } else {
    m.rho = pearson(pred_hrs, gt_hrs);
  }

  if (pred_waves.empty()) {
    m.snr = std::numeric_limits<double>::quiet_NaN();
  } else {
    for (std::size_t i = 0; i < pred_waves.size(); ++i) m.snr += snr_db(pred_waves[i], gt_hrs[i]);
    m.snr /= n;
  }
  return m;
}

void write_metrics_csv(std::ostream& out, const std::string& config_hash, std::span<const MetricsRow> rows) {
  out << "# config_hash=" << config_hash << '\n' << "clip_id,gt_hr,pred_hr,mae_contrib,snr_db\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.clip_id << ',' << r.gt_hr << ',' << r.pred_hr << ',' << std::abs(r.pred_hr - r.gt_hr) << ','
        << r.snr_db << '\n';
  }
}

}  // namespace rhythm::dsp
