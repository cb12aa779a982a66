#pragma once

#include <span>
#include <vector>

#include "rhythm/dsp.hpp"

namespace rhythm::dsp::detail {

struct WelchLayout {
  std::size_t segment = 0;
  std::size_t step = 0;
  std::size_t count = 0;
  std::size_t nfft = 0;
  std::vector<double> window;
  double scale = 0.0;  // 1 / (fs * sum w^2)
};

WelchLayout welch_layout(std::size_t length, double fs, const WelchConfig& cfg);
std::vector<double> hamming_periodic(std::size_t n);
// Removes the least-squares line in place.
void detrend_linear(std::span<double> x);

}  // namespace rhythm::dsp::detail
