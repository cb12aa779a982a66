#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "rhythm/dsp.hpp"
#include "rhythm/error.hpp"

namespace rhythm::dsp {
namespace {

using cd = std::complex<double>;

// Monic quadratic with roots p, conj(p): [1, -2 Re p, |p|^2].
std::array<double, 3> conjugate_pair(cd p) { return {1.0, -2.0 * p.real(), std::norm(p)}; }

// Steady-state initial conditions of one transposed direct-form II section
// for a unit step input.
std::array<double, 2> section_zi(const Section& s) {
  const double b0 = s[0], b1 = s[1], b2 = s[2], a1 = s[4], a2 = s[5];
  // [[1 + a1, -1], [a2, 1]] zi = [b1 - a1 b0, b2 - a2 b0]
  const double r0 = b1 - a1 * b0, r1 = b2 - a2 * b0;
  const double det = (1.0 + a1) + a2;
  const double z0 = (r0 + r1) / det;
  return {z0, r1 - a2 * z0};
}

std::vector<double> sosfilt(const std::vector<Section>& sos, std::vector<double> x,
                            const std::vector<std::array<double, 2>>& zi) {
  const double x0 = x.front();
  for (std::size_t k = 0; k < sos.size(); ++k) {
    const Section& s = sos[k];
    double z0 = zi[k][0] * x0, z1 = zi[k][1] * x0;
    for (double& v : x) {
      const double in = v;
      const double y = s[0] * in + z0;
      z0 = s[1] * in - s[4] * y + z1;
      z1 = s[2] * in - s[5] * y;
      v = y;
    }
  }
  return x;
}

}  // namespace

void Wave::validate() const {
  if (!(fs > 0.0)) throw ShapeError("wave: sampling rate must be positive");
  if (samples.size() < 2) throw ShapeError("wave: need at least two samples");
}

std::vector<Section> butterworth_bandpass_sos(double lo, double hi, double fs) {
  if (!(fs > 0.0) || !(lo > 0.0) || !(lo < hi) || !(hi < fs / 2.0)) {
    throw ConfigError("butterworth: need 0 < lo < hi < fs/2 (lo=" + std::to_string(lo) +
                      ", hi=" + std::to_string(hi) + ", fs=" + std::to_string(fs) + ")");
  }
  const double fs2 = 2.0 * fs;
  const double w1 = fs2 * std::tan(std::numbers::pi * lo / fs);
  const double w2 = fs2 * std::tan(std::numbers::pi * hi / fs);
  const double bw = w2 - w1, w0sq = w1 * w2;

  // Order-2 lowpass prototype poles, upper half plane representative.
  const cd proto = std::polar(1.0, 3.0 * std::numbers::pi / 4.0);
  // Lowpass-to-bandpass: s^2 - p bw s + w0^2 = 0.
  const cd disc = std::sqrt(proto * proto * bw * bw - 4.0 * w0sq);
  const cd s1 = (proto * bw + disc) / 2.0, s2 = (proto * bw - disc) / 2.0;
  auto bilinear = [&](cd s) { return (fs2 + s) / (fs2 - s); };
  cd z1 = bilinear(s1), z2 = bilinear(s2);
  if (std::abs(z1) > std::abs(z2)) std::swap(z1, z2);

  // Two analog zeros at the origin, two at infinity (-> z = -1).
  // Gain: bw^2 * (fs2)^2 / prod over all four poles of (fs2 - s).
  const cd den = (fs2 - s1) * (fs2 - std::conj(s1)) * (fs2 - s2) * (fs2 - std::conj(s2));
  const double gain = (bw * bw * fs2 * fs2 / den).real();

  const auto a_first = conjugate_pair(z1), a_second = conjugate_pair(z2);
  return {Section{gain, 2.0 * gain, gain, a_first[0], a_first[1], a_first[2]},
          Section{1.0, -2.0, 1.0, a_second[0], a_second[1], a_second[2]}};
}

std::vector<double> sosfiltfilt(const std::vector<Section>& sos, std::span<const double> x) {
  const std::size_t T = x.size();
  if (T < 2) throw ShapeError("sosfiltfilt: need at least two samples");
  const std::size_t edge = std::min<std::size_t>(3 * (2 * sos.size() + 1), T - 1);

  std::vector<double> ext;
  ext.reserve(T + 2 * edge);
  for (std::size_t i = edge; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= edge; ++i) ext.push_back(2.0 * x[T - 1] - x[T - 1 - i]);

  std::vector<std::array<double, 2>> zi(sos.size());
  double scale = 1.0;
  for (std::size_t k = 0; k < sos.size(); ++k) {
    const auto z = section_zi(sos[k]);
    zi[k] = {z[0] * scale, z[1] * scale};
    const Section& s = sos[k];
    scale *= (s[0] + s[1] + s[2]) / (s[3] + s[4] + s[5]);
  }

  auto y = sosfilt(sos, std::move(ext), zi);
  std::reverse(y.begin(), y.end());
  y = sosfilt(sos, std::move(y), zi);
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<long>(edge), y.begin() + static_cast<long>(edge + T)};
}

Wave butterworth_bandpass(const Wave& w, double lo, double hi) {
  w.validate();
  return {sosfiltfilt(butterworth_bandpass_sos(lo, hi, w.fs), w.samples), w.fs};
}

}  // namespace rhythm::dsp
