#pragma once

#include <complex>
#include <span>
#include <vector>

// Real-input FFT helpers backed by FFTW. Safe to call from several threads.
namespace rhythm::fft {

using Complex = std::complex<double>;

// Unnormalised forward transform of x zero-padded to n samples;
// returns the n/2 + 1 non-negative-frequency bins.
std::vector<Complex> rfft(std::span<const double> x, std::size_t n);
inline std::vector<Complex> rfft(std::span<const double> x) { return rfft(x, x.size()); }

// Inverse of rfft for a length-n real signal, including the 1/n factor.
std::vector<double> irfft(std::span<const Complex> bins, std::size_t n);

}  // namespace rhythm::fft
