#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

#include "rhythm/error.hpp"
#include "rhythm/harness.hpp"
#include "rhythm/ssm.hpp"

namespace rhythm::harness {
namespace {

// Each timing sample runs at least this many scan elements.
constexpr std::size_t kMinWork = std::size_t(1) << 21;

ssm::SelectiveSsm random_ssm(std::size_t L, std::size_t N, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> decay(0.5, 0.999), coef(-1.0, 1.0);
  ssm::SelectiveSsm s;
  s.length = L;
  s.state = N;
  s.a_bar.resize(L * N);
  s.b_bar.resize(L * N);
  s.c.resize(L * N);
  for (auto& v : s.a_bar) v = decay(rng);
  for (auto& v : s.b_bar) v = coef(rng);
  for (auto& v : s.c) v = coef(rng);
  s.d = 0.5;
  return s;
}

template <typename F>
double time_min(std::size_t repeats, std::size_t inner, F&& f) {
  double best = 1e300;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < inner; ++i) f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count() / double(inner));
  }
  return best;
}

// Working buffers per call, from the scan implementations' allocation sizes.
std::size_t scan_bytes(const std::string& mode, std::size_t L, std::size_t N, std::size_t chunk) {
  const std::size_t d = sizeof(double);
  if (mode == "sequential") return (2 * L * N + L) * d;  // lane inputs, states, output
  if (mode == "parallel") {
    const std::size_t chunks = (L + chunk - 1) / chunk;
    return (2 * L * N + L + 3 * chunks * N + 2 * chunks) * d;  // plus chunk aggregates and carries
  }
  return (2 * L + N) * d;  // kernel, powers, output
}

}  // namespace

double loglog_slope(const std::vector<BenchRow>& rows, const std::string& mode) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
  for (const auto& r : rows) {
    if (r.mode != mode || r.seconds <= 0.0) continue;
    const double x = std::log(double(r.length)), y = std::log(r.seconds);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    n += 1;
  }
  if (n < 2) return std::nan("");
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

BenchResult bench_scan(const BenchConfig& cfg) {
  BenchResult res;
  for (std::size_t lg = cfg.min_log2; lg <= cfg.max_log2; ++lg) {
    const std::size_t L = std::size_t(1) << lg;
    const ssm::SelectiveSsm s = random_ssm(L, cfg.state, lg);
    std::vector<double> x(L);
    std::mt19937_64 rng(lg + 1000);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : x) v = u(rng);

    const std::size_t inner = std::max<std::size_t>(1, kMinWork / (L * cfg.state));
    std::vector<double> seq, par;
    res.rows.push_back({"sequential", L, time_min(cfg.repeats, inner, [&] { seq = ssm::scan_sequential(s, x); }),
                        scan_bytes("sequential", L, cfg.state, 64)});
    const ssm::ScanOptions opts{.chunk = 64, .workers = cfg.workers};
    res.rows.push_back({"parallel", L, time_min(cfg.repeats, inner, [&] { par = ssm::scan_parallel(s, x, opts); }),
                        scan_bytes("parallel", L, cfg.state, opts.chunk)});
    for (std::size_t i = 0; i < L; ++i) {
      if (!(std::abs(par[i] - seq[i]) <= 1e-8 * std::max(1.0, std::abs(seq[i])))) {
        throw NumericError("bench-scan: parallel and sequential outputs differ at L=" + std::to_string(L) +
                           ", index " + std::to_string(i));
      }
    }

    if (L <= cfg.kernel_max) {
      // time-invariant slice of the same parameters, applied as a causal convolution
      ssm::DiscreteSsm disc{{s.a_bar.begin(), s.a_bar.begin() + long(cfg.state)},
                            {s.b_bar.begin(), s.b_bar.begin() + long(cfg.state)}};
      const std::vector<double> c(s.c.begin(), s.c.begin() + long(cfg.state));
      std::vector<double> y;
      const std::size_t kinner = std::max<std::size_t>(1, kMinWork / (L * L / 64 + 1));
      res.rows.push_back({"kernel", L, time_min(cfg.repeats, kinner, [&] {
                            y = ssm::apply_kernel(ssm::ssm_kernel(disc, c, L), x);
                          }),
                          scan_bytes("kernel", L, cfg.state, 0)});
    }
  }
  for (const char* mode : {"sequential", "parallel", "kernel"}) res.slopes[mode] = loglog_slope(res.rows, mode);
  return res;
}

void write_bench_csv(const std::filesystem::path& path, const std::string& hash, const BenchResult& result) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# config_hash=" << hash << "\nmode,L,wall_time_ns,peak_bytes\n" << std::fixed << std::setprecision(1);
  for (const auto& r : result.rows) out << r.mode << ',' << r.length << ',' << r.seconds * 1e9 << ',' << r.peak_bytes << '\n';
  out << std::defaultfloat << std::setprecision(6);
  for (const auto& [mode, slope] : result.slopes) out << "# slope " << mode << " = " << slope << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace rhythm::harness
