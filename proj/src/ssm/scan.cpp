#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "rhythm/error.hpp"
#include "rhythm/ssm.hpp"

namespace rhythm::ssm {
namespace {

void check_state(double h, std::size_t t) {
  if (!std::isfinite(h)) {
    throw NumericError("ssm scan: non-finite state at timestep " + std::to_string(t));
  }
}

// Runs body(first, last) over contiguous ranges of [0, count).
template <class Body>
void for_ranges(std::size_t count, std::size_t workers, Body body) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    body(std::size_t{0}, count);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t per = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t first = w * per, last = std::min(count, first + per);
    if (first >= last) break;
    pool.emplace_back([=] { body(first, last); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

ZohCoefficients zoh(double a, double b, double delta) {
  if (!(delta > 0.0)) throw NumericError("zoh: delta must be positive");
  const double z = delta * a;
  const double a_bar = std::exp(z);
  if (std::abs(z) < kZohSeriesThreshold) return {a_bar, delta * b};
  return {a_bar, std::expm1(z) / a * b};
}

DiscreteSsm discretize_zoh(const SsmParams& params, double delta) {
  if (params.b.size() != params.a.size()) throw ShapeError("discretize_zoh: A and B sizes differ");
  DiscreteSsm out;
  out.a_bar.resize(params.a.size());
  out.b_bar.resize(params.a.size());
  for (std::size_t n = 0; n < params.a.size(); ++n) {
    const auto [ab, bb] = zoh(params.a[n], params.b[n], delta);
    out.a_bar[n] = ab;
    out.b_bar[n] = bb;
  }
  return out;
}

std::vector<double> scan_sequential(const DiscreteSsm& disc, std::span<const double> c,
                                    std::span<const double> x, double d) {
  const std::size_t N = disc.a_bar.size();
  if (disc.b_bar.size() != N || c.size() != N) throw ShapeError("scan_sequential: state size mismatch");
  std::vector<double> h(N, 0.0), y(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    double acc = d * x[t];
    for (std::size_t n = 0; n < N; ++n) {
      h[n] = disc.a_bar[n] * h[n] + disc.b_bar[n] * x[t];
      check_state(h[n], t);
      acc += c[n] * h[n];
    }
    y[t] = acc;
  }
  return y;
}

std::vector<double> ssm_kernel(const DiscreteSsm& disc, std::span<const double> c, std::size_t length) {
  const std::size_t N = disc.a_bar.size();
  if (disc.b_bar.size() != N || c.size() != N) throw ShapeError("ssm_kernel: state size mismatch");
  std::vector<double> k(length, 0.0);
  std::vector<double> power = disc.b_bar;  // Abar^j Bbar
  for (std::size_t j = 0; j < length; ++j) {
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      acc += c[n] * power[n];
      power[n] *= disc.a_bar[n];
    }
    k[j] = acc;
  }
  return k;
}

std::vector<double> apply_kernel(std::span<const double> kernel, std::span<const double> x) {
  if (kernel.size() < x.size()) throw ShapeError("apply_kernel: kernel shorter than input");
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    double acc = 0.0;
    for (std::size_t j = 0; j <= t; ++j) acc += kernel[j] * x[t - j];
    y[t] = acc;
  }
  return y;
}

std::vector<double> lane_scan_sequential(std::span<const double> a, std::span<const double> u,
                                         std::size_t length, std::size_t state) {
  if (a.size() != length * state || u.size() != length * state) {
    throw ShapeError("lane_scan: coefficient arrays do not match [L, N]");
  }
  std::vector<double> h(length * state);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t n = 0; n < state; ++n) {
      const double prev = t ? h[(t - 1) * state + n] : 0.0;
      const double v = a[t * state + n] * prev + u[t * state + n];
      check_state(v, t);
      h[t * state + n] = v;
    }
  }
  return h;
}

std::vector<ScanElement> exclusive_tree_scan(std::vector<ScanElement> elems) {
  const std::size_t count = elems.size();
  std::size_t size = 1;
  while (size < count) size <<= 1;
  elems.resize(size, ScanElement{});
  // up-sweep: each right child accumulates its subtree
  for (std::size_t stride = 1; stride < size; stride <<= 1) {
    for (std::size_t i = 2 * stride - 1; i < size; i += 2 * stride) {
      elems[i] = combine(elems[i], elems[i - stride]);
    }
  }
  // down-sweep: push prefixes back down, left subtree first
  elems[size - 1] = ScanElement{};
  for (std::size_t stride = size >> 1; stride >= 1; stride >>= 1) {
    for (std::size_t i = 2 * stride - 1; i < size; i += 2 * stride) {
      const ScanElement left = elems[i - stride];
      elems[i - stride] = elems[i];
      elems[i] = combine(left, elems[i]);
    }
    if (stride == 1) break;
  }
  elems.resize(count);
  return elems;
}

std::vector<double> lane_scan_parallel(std::span<const double> a, std::span<const double> u,
                                       std::size_t length, std::size_t state, ScanOptions opts) {
  if (length == 0) throw ShapeError("scan_parallel: empty input");
  if (a.size() != length * state || u.size() != length * state) {
    throw ShapeError("lane_scan: coefficient arrays do not match [L, N]");
  }
  const std::size_t chunk = std::max<std::size_t>(1, opts.chunk);
  const std::size_t chunks = (length + chunk - 1) / chunk;

  // Pass 1: per-chunk aggregate of every lane.
  std::vector<ScanElement> agg(chunks * state);
  for_ranges(chunks, opts.workers, [&](std::size_t first, std::size_t last) {
    for (std::size_t c = first; c < last; ++c) {
      const std::size_t t0 = c * chunk, t1 = std::min(length, t0 + chunk);
      for (std::size_t n = 0; n < state; ++n) {
        ScanElement e;
        for (std::size_t t = t0; t < t1; ++t) e = combine({a[t * state + n], u[t * state + n]}, e);
        agg[c * state + n] = e;
      }
    }
  });

  // Pass 2: carry-in state of every chunk from the tree over aggregates.
  std::vector<double> carry(chunks * state);
  std::vector<ScanElement> lane(chunks);
  for (std::size_t n = 0; n < state; ++n) {
    for (std::size_t c = 0; c < chunks; ++c) lane[c] = agg[c * state + n];
    const auto prefix = exclusive_tree_scan(lane);
    for (std::size_t c = 0; c < chunks; ++c) carry[c * state + n] = prefix[c].b;
  }

  // Pass 3: rescan each chunk from its carry-in.
  std::vector<double> h(length * state);
  for_ranges(chunks, opts.workers, [&](std::size_t first, std::size_t last) {
    for (std::size_t c = first; c < last; ++c) {
      const std::size_t t0 = c * chunk, t1 = std::min(length, t0 + chunk);
      for (std::size_t n = 0; n < state; ++n) {
        double prev = carry[c * state + n];
        for (std::size_t t = t0; t < t1; ++t) {
          prev = a[t * state + n] * prev + u[t * state + n];
          h[t * state + n] = prev;
        }
      }
    }
  });
  for (std::size_t i = 0; i < h.size(); ++i) check_state(h[i], i / state);
  return h;
}

namespace {

std::vector<double> lane_inputs(const SelectiveSsm& ssm, std::span<const double> x) {
  const std::size_t L = ssm.length, N = ssm.state;
  if (x.size() != L || ssm.a_bar.size() != L * N || ssm.b_bar.size() != L * N || ssm.c.size() != L * N) {
    throw ShapeError("selective scan: parameter arrays do not match [L, N]");
  }
  std::vector<double> u(L * N);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t n = 0; n < N; ++n) u[t * N + n] = ssm.b_bar[t * N + n] * x[t];
  return u;
}

std::vector<double> readout(const SelectiveSsm& ssm, const std::vector<double>& h, std::span<const double> x) {
  std::vector<double> y(ssm.length);
  for (std::size_t t = 0; t < ssm.length; ++t) {
    double acc = ssm.d * x[t];
    for (std::size_t n = 0; n < ssm.state; ++n) acc += ssm.c[t * ssm.state + n] * h[t * ssm.state + n];
    y[t] = acc;
  }
  return y;
}

}  // namespace

std::vector<double> scan_sequential(const SelectiveSsm& ssm, std::span<const double> x) {
  const auto u = lane_inputs(ssm, x);
  return readout(ssm, lane_scan_sequential(ssm.a_bar, u, ssm.length, ssm.state), x);
}

std::vector<double> scan_parallel(const SelectiveSsm& ssm, std::span<const double> x, ScanOptions opts) {
  if (x.empty()) throw ShapeError("scan_parallel: empty input");
  const auto u = lane_inputs(ssm, x);
  return readout(ssm, lane_scan_parallel(ssm.a_bar, u, ssm.length, ssm.state, opts), x);
}

}  // namespace rhythm::ssm
