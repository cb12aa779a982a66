#include "rhythm/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>

#include "rhythm/error.hpp"

namespace rhythm::fft {
namespace {

// FFTW planning is not thread-safe; execution with the new-array interface
// is. Plans are created once per length under the lock and kept for the
// process lifetime.
struct PlanCache {
  std::mutex mu;
  std::map<std::size_t, fftw_plan> forward;
  std::map<std::size_t, fftw_plan> inverse;

  fftw_plan get(std::size_t n, bool inv) {
    std::lock_guard lock(mu);
    auto& table = inv ? inverse : forward;
    if (auto it = table.find(n); it != table.end()) return it->second;
    auto* real = fftw_alloc_real(n);
    auto* cplx = fftw_alloc_complex(n / 2 + 1);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fftw_plan p = inv ? fftw_plan_dft_c2r_1d(static_cast<int>(n), cplx, real, flags)
                      : fftw_plan_dft_r2c_1d(static_cast<int>(n), real, cplx, flags);
    fftw_free(real);
    fftw_free(cplx);
    if (!p) throw Error("fftw planning failed for length " + std::to_string(n));
    table.emplace(n, p);
    return p;
  }
};

PlanCache& cache() {
  static PlanCache c;
  return c;
}

}  // namespace

std::vector<Complex> rfft(std::span<const double> x, std::size_t n) {
  if (n == 0 || x.size() > n) throw ShapeError("rfft: bad transform length");
  std::vector<double> in(n, 0.0);
  std::copy(x.begin(), x.end(), in.begin());
  std::vector<Complex> out(n / 2 + 1);
  fftw_execute_dft_r2c(cache().get(n, false), in.data(),
                       reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

std::vector<double> irfft(std::span<const Complex> bins, std::size_t n) {
  if (n == 0 || bins.size() != n / 2 + 1) throw ShapeError("irfft: bin count does not match length");
  // c2r destroys its input.
  std::vector<Complex> in(bins.begin(), bins.end());
  std::vector<double> out(n);
  fftw_execute_dft_c2r(cache().get(n, true), reinterpret_cast<fftw_complex*>(in.data()),
                       out.data());
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : out) v *= inv;
  return out;
}

}  // namespace rhythm::fft
