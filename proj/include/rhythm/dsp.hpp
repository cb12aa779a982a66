#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rhythm/autodiff.hpp"

namespace rhythm::dsp {

struct Wave {
  std::vector<double> samples;
  double fs = 30.0;

  std::size_t size() const { return samples.size(); }
  // Throws ShapeError unless fs > 0 and at least two samples.
  void validate() const;
};

// One-sided spectrum. freqs strictly increasing, power >= 0.
struct SpectrumEstimate {
  std::vector<double> freqs;
  std::vector<double> power;
  double bin_width = 0.0;
};

struct Band {
  double lo = 0.75;
  double hi = 2.5;
};

struct LossConfig {
  double a = 0.2;  // time-loss weight
  double b = 1.0;  // frequency-loss weight
  Band hr_band;
};

struct WelchConfig {
  std::size_t segment = 160;  // capped at the signal length
  double overlap = 0.5;
  double max_bin_width = 0.01;  // Hz; picks the zero-padded FFT size
};

inline constexpr double kPearsonEps = 1e-8;
inline constexpr double kLogPowerEps = 1e-10;

// Pearson correlation with a variance guard; 0 when either side is constant.
double pearson(std::span<const double> a, std::span<const double> b);

// 1 - rho(pred, gt), in [0, 2].
double loss_time(const Wave& pred, const Wave& gt);
// Cross-entropy of log-power logits over band bins against the gt argmax bin.
double loss_freq(const Wave& pred, const Wave& gt, const LossConfig& cfg = {}, const WelchConfig& welch = {});
double loss_overall(const Wave& pred, const Wave& gt, const LossConfig& cfg = {}, const WelchConfig& welch = {});

// Differentiable forms over a length-T prediction; gt is a fixed target.
Var loss_time(const Var& pred, std::span<const double> gt);
Var loss_freq(const Var& pred, std::span<const double> gt, double fs, const LossConfig& cfg = {},
              const WelchConfig& welch = {});
Var loss_overall(const Var& pred, std::span<const double> gt, double fs, const LossConfig& cfg = {},
                 const WelchConfig& welch = {});

// Second-order sections [b0 b1 b2 a0 a1 a2].
using Section = std::array<double, 6>;

// Order-2 Butterworth bandpass prototype (two sections) via bilinear
// transform with prewarped edges. Throws ConfigError unless 0 < lo < hi < fs/2.
std::vector<Section> butterworth_bandpass_sos(double lo, double hi, double fs);
// Forward-backward filtering with odd extension and steady-state initial
// conditions; padding shrinks for short inputs.
std::vector<double> sosfiltfilt(const std::vector<Section>& sos, std::span<const double> x);
Wave butterworth_bandpass(const Wave& w, double lo = 0.75, double hi = 2.5);

// FFT length: smallest power of two >= segment with fs / nfft <= max_bin_width.
std::size_t welch_nfft(std::size_t segment, double fs, double max_bin_width);
// Linear detrend, periodic Hamming window, density scaling.
SpectrumEstimate welch_psd(const Wave& w, const WelchConfig& cfg = {});
// Single-segment version of the above over the whole signal.
SpectrumEstimate periodogram(const Wave& w, double max_bin_width = 0.01);

struct HrEstimate {
  double bpm = 0.0;
  // Set when a stronger peak lies outside the band or the peak sits on a band edge.
  bool low_confidence = false;
};

HrEstimate estimate_hr(const SpectrumEstimate& spec, const Band& band = {});
// Bandpass, Welch, argmax: the standard readout for a wave.
HrEstimate wave_hr(const Wave& w, const WelchConfig& cfg = {}, const Band& band = {});

// Power within +-0.1 Hz of the fundamental and of its first harmonic over the
// remaining power in the band, in dB.
double snr_db(const Wave& w, double hr_bpm, const Band& band = {});

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // percent
  double rho = 0.0;   // NaN when undefined
  double snr = 0.0;   // mean dB over waves
};

Metrics metrics(std::span<const double> pred_hrs, std::span<const double> gt_hrs,
                std::span<const Wave> pred_waves, std::span<const Wave> gt_waves);

struct MetricsRow {
  std::string clip_id;
  double gt_hr = 0.0;
  double pred_hr = 0.0;
  double snr_db = 0.0;
};

// Writes "# config_hash=<hash>", a header, then clip_id,gt_hr,pred_hr,mae_contrib,snr_db.
void write_metrics_csv(std::ostream& out, const std::string& config_hash, std::span<const MetricsRow> rows);

}  // namespace rhythm::dsp
