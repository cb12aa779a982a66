#include <Eigen/Core>
#include <cmath>
#include <string>

#include "rhythm/error.hpp"
#include "rhythm/fft.hpp"
#include "rhythm/ops.hpp"

namespace rhythm::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_sequence(const char* op, const Var& x) {
  if (x.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected [T, C], got " + shape_str(x.shape()));
  }
}

std::size_t half_bins(std::size_t length) { return length / 2 + 1; }

// Bins whose conjugate partner is another stored bin count twice in the
// inverse transform; DC and (for even length) Nyquist count once.
double bin_weight(std::size_t k, std::size_t length) {
  if (k == 0) return 1.0;
  if (length % 2 == 0 && k == length / 2) return 1.0;
  return 2.0;
}

}  // namespace

Var depthwise_conv1d(const Var& x, const Var& weight, const Var& bias) {
  require_sequence("depthwise_conv1d", x);
  const std::size_t T = x.dim(0), C = x.dim(1);
  if (weight.value().rank() != 2 || weight.dim(0) != C || bias.value().numel() != C) {
    throw ShapeError("depthwise_conv1d: weight " + shape_str(weight.shape()) + " for " +
                     shape_str(x.shape()));
  }
  const std::size_t K = weight.dim(1);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  Tensor out({T, C});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      double acc = bias.value()[c];
      for (std::size_t j = 0; j < K; ++j) {
        const long src = static_cast<long>(t + j) - static_cast<long>(K - 1);
        if (src >= 0) acc += wv.at(c, j) * xv.at(static_cast<std::size_t>(src), c);
      }
      out.at(t, c) = acc;
    }
  }
  return record_op("depthwise_conv1d", std::move(out), {x, weight, bias}, [T, C, K](Node& n) {
    Tensor* gx = n.grad_of(0);
    Tensor* gw = n.grad_of(1);
    Tensor* gb = n.grad_of(2);
    const Tensor& xv = n.in(0);
    const Tensor& wv = n.in(1);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        const double g = n.grad.at(t, c);
        if (gb) (*gb)[c] += g;
        for (std::size_t j = 0; j < K; ++j) {
          const long src = static_cast<long>(t + j) - static_cast<long>(K - 1);
          if (src < 0) continue;
          const auto s = static_cast<std::size_t>(src);
          if (gx) gx->at(s, c) += g * wv.at(c, j);
          if (gw) gw->at(c, j) += g * xv.at(s, c);
        }
      }
    }
  });
}

Var rfft_time(const Var& x) {
  require_sequence("rfft_time", x);
  const std::size_t T = x.dim(0), C = x.dim(1), F = half_bins(T);
  Tensor out({2, F, C});
  std::vector<double> column(T);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) column[t] = x.value().at(t, c);
    const auto bins = fft::rfft(column);
    for (std::size_t k = 0; k < F; ++k) {
      out[k * C + c] = bins[k].real();
      out[F * C + k * C + c] = bins[k].imag();
    }
  }
  return record_op("rfft_time", std::move(out), {x}, [T, C, F](Node& n) {
    Tensor* gx = n.grad_of(0);
    if (!gx) return;
    // Adjoint of the half-spectrum DFT: T * irfft of the cotangent with the
    // doubled bins halved.
    std::vector<fft::Complex> bins(F);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t k = 0; k < F; ++k) {
        const double w = 1.0 / bin_weight(k, T);
        bins[k] = {w * n.grad[k * C + c], w * n.grad[F * C + k * C + c]};
      }
      bins[0].imag(0.0);
      if (T % 2 == 0) bins[F - 1].imag(0.0);
      const auto col = fft::irfft(bins, T);
      for (std::size_t t = 0; t < T; ++t) gx->at(t, c) += static_cast<double>(T) * col[t];
    }
  });
}

Var irfft_time(const Var& spectrum, std::size_t length) {
  const auto& s = spectrum.shape();
  if (s.size() != 3 || s[0] != 2 || s[1] != half_bins(length)) {
    throw ShapeError("irfft_time: spectrum " + shape_str(s) + " for length " +
                     std::to_string(length));
  }
  const std::size_t F = s[1], C = s[2], T = length;
  Tensor out({T, C});
  std::vector<fft::Complex> bins(F);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t k = 0; k < F; ++k) {
      bins[k] = {spectrum.value()[k * C + c], spectrum.value()[F * C + k * C + c]};
    }
    bins[0].imag(0.0);
    if (T % 2 == 0) bins[F - 1].imag(0.0);
    const auto col = fft::irfft(bins, T);
    for (std::size_t t = 0; t < T; ++t) out.at(t, c) = col[t];
  }
  return record_op("irfft_time", std::move(out), {spectrum}, [T, C, F](Node& n) {
    Tensor* gs = n.grad_of(0);
    if (!gs) return;
    std::vector<double> column(T);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < T; ++t) column[t] = n.grad.at(t, c);
      const auto bins = fft::rfft(column);
      for (std::size_t k = 0; k < F; ++k) {
        const double w = bin_weight(k, T) / static_cast<double>(T);
        const bool real_only = k == 0 || (T % 2 == 0 && k == F - 1);
        (*gs)[k * C + c] += w * bins[k].real();
        if (!real_only) (*gs)[F * C + k * C + c] += w * bins[k].imag();
      }
    }
  });
}

Var complex_linear(const Var& spectrum, const Var& w_re, const Var& w_im, const Var& b_re,
                   const Var& b_im) {
  const auto& s = spectrum.shape();
  if (s.size() != 3 || s[0] != 2) {
    throw ShapeError("complex_linear: expected [2, F, C], got " + shape_str(s));
  }
  const std::size_t F = s[1], Ci = s[2];
  if (w_re.shape() != w_im.shape() || w_re.value().rank() != 2 || w_re.dim(0) != Ci) {
    throw ShapeError("complex_linear: weights " + shape_str(w_re.shape()) + " for " + shape_str(s));
  }
  const std::size_t Co = w_re.dim(1);
  if (b_re.value().numel() != Co || b_im.value().numel() != Co) {
    throw ShapeError("complex_linear: bias size mismatch");
  }
  Tensor out({2, F, Co});
  ConstMatMap re(spectrum.value().data().data(), F, Ci);
  ConstMatMap im(spectrum.value().data().data() + F * Ci, F, Ci);
  ConstMatMap Wr(w_re.value().data().data(), Ci, Co);
  ConstMatMap Wi(w_im.value().data().data(), Ci, Co);
  MatMap ore(out.data().data(), F, Co);
  MatMap oim(out.data().data() + F * Co, F, Co);
  ore.noalias() = re * Wr - im * Wi;
  oim.noalias() = re * Wi + im * Wr;
  for (std::size_t k = 0; k < F; ++k)
    for (std::size_t o = 0; o < Co; ++o) {
      ore(k, o) += b_re.value()[o];
      oim(k, o) += b_im.value()[o];
    }
  return record_op("complex_linear", std::move(out), {spectrum, w_re, w_im, b_re, b_im},
                   [F, Ci, Co](Node& n) {
    ConstMatMap gre(n.grad.data().data(), F, Co);
    ConstMatMap gim(n.grad.data().data() + F * Co, F, Co);
    ConstMatMap re(n.in(0).data().data(), F, Ci);
    ConstMatMap im(n.in(0).data().data() + F * Ci, F, Ci);
    ConstMatMap Wr(n.in(1).data().data(), Ci, Co);
    ConstMatMap Wi(n.in(2).data().data(), Ci, Co);
    if (Tensor* gs = n.grad_of(0)) {
      MatMap(gs->data().data(), F, Ci).noalias() += gre * Wr.transpose() + gim * Wi.transpose();
      MatMap(gs->data().data() + F * Ci, F, Ci).noalias() +=
          gim * Wr.transpose() - gre * Wi.transpose();
    }
    if (Tensor* g = n.grad_of(1)) {
      MatMap(g->data().data(), Ci, Co).noalias() += re.transpose() * gre + im.transpose() * gim;
    }
    if (Tensor* g = n.grad_of(2)) {
      MatMap(g->data().data(), Ci, Co).noalias() += re.transpose() * gim - im.transpose() * gre;
    }
    if (Tensor* g = n.grad_of(3)) {
      for (std::size_t o = 0; o < Co; ++o) (*g)[o] += gre.col(static_cast<Eigen::Index>(o)).sum();
    }
    if (Tensor* g = n.grad_of(4)) {
      for (std::size_t o = 0; o < Co; ++o) (*g)[o] += gim.col(static_cast<Eigen::Index>(o)).sum();
    }
  });
}

Var layernorm_channels(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_sequence("layernorm_channels", x);
  const std::size_t T = x.dim(0), C = x.dim(1);
  if (gamma.value().numel() != C || beta.value().numel() != C) {
    throw ShapeError("layernorm_channels: affine parameters do not match channel count");
  }
  Tensor out({T, C});
  Tensor xhat({T, C});
  std::vector<double> inv_std(T);
  for (std::size_t t = 0; t < T; ++t) {
    double m = 0.0;
    for (std::size_t c = 0; c < C; ++c) m += x.value().at(t, c);
    m /= static_cast<double>(C);
    double v = 0.0;
    for (std::size_t c = 0; c < C; ++c) v += (x.value().at(t, c) - m) * (x.value().at(t, c) - m);
    v /= static_cast<double>(C);
    inv_std[t] = 1.0 / std::sqrt(v + eps);
    for (std::size_t c = 0; c < C; ++c) {
      xhat.at(t, c) = (x.value().at(t, c) - m) * inv_std[t];
      out.at(t, c) = xhat.at(t, c) * gamma.value()[c] + beta.value()[c];
    }
  }
  return record_op("layernorm_channels", std::move(out), {x, gamma, beta},
                   [T, C, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
    Tensor* gx = n.grad_of(0);
    Tensor* gg = n.grad_of(1);
    Tensor* gb = n.grad_of(2);
    const Tensor& gam = n.in(1);
    for (std::size_t t = 0; t < T; ++t) {
      double mg = 0.0, mgx = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double g = n.grad.at(t, c);
        if (gg) (*gg)[c] += g * xhat.at(t, c);
        if (gb) (*gb)[c] += g;
        const double gh = g * gam[c];
        mg += gh;
        mgx += gh * xhat.at(t, c);
      }
      if (!gx) continue;
      mg /= static_cast<double>(C);
      mgx /= static_cast<double>(C);
      for (std::size_t c = 0; c < C; ++c) {
        const double gh = n.grad.at(t, c) * gam[c];
        gx->at(t, c) += inv_std[t] * (gh - mg - xhat.at(t, c) * mgx);
      }
    }
  });
}

Var slice_time(const Var& x, std::size_t begin, std::size_t end) {
  if (x.value().rank() < 1 || begin > end || end > x.dim(0)) {
    throw ShapeError("slice_time: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") of " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  const std::size_t row = x.value().numel() / shape[0];
  shape[0] = end - begin;
  std::vector<double> data(x.value().data().begin() + static_cast<long>(begin * row),
                           x.value().data().begin() + static_cast<long>(end * row));
  return record_op("slice_time", Tensor(std::move(shape), std::move(data)), {x},
                   [begin, row](Node& n) {
    Tensor* gx = n.grad_of(0);
    if (!gx) return;
    for (std::size_t i = 0; i < n.grad.numel(); ++i) (*gx)[begin * row + i] += n.grad[i];
  });
}

Var concat_time(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_time: no parts");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) throw ShapeError("concat_time: mismatched trailing shape " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  Shape shape = parts[0].shape();
  shape[0] = rows;
  std::vector<double> data;
  data.reserve(shape_numel(shape));
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(data.size());
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  return record_op("concat_time", Tensor(std::move(shape), std::move(data)), parts,
                   [offsets = std::move(offsets)](Node& n) {
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      Tensor* g = n.grad_of(k);
      if (!g) continue;
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[offsets[k] + i];
    }
  });
}

Var pad_time_replicate(const Var& x, std::size_t length) {
  require_sequence("pad_time_replicate", x);
  const std::size_t T = x.dim(0), C = x.dim(1);
  if (T == 0 || length < T) throw ShapeError("pad_time_replicate: cannot shrink or pad empty");
  Tensor out({length, C});
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t c = 0; c < C; ++c) out.at(t, c) = x.value().at(std::min(t, T - 1), c);
  return record_op("pad_time_replicate", std::move(out), {x}, [T, C, length](Node& n) {
    Tensor* gx = n.grad_of(0);
    if (!gx) return;
    for (std::size_t t = 0; t < length; ++t)
      for (std::size_t c = 0; c < C; ++c) gx->at(std::min(t, T - 1), c) += n.grad.at(t, c);
  });
}

Var standardize(const Var& x, double eps) {
  const std::size_t n = x.value().numel();
  if (n == 0) throw ShapeError("standardize: empty input");
  double m = 0.0;
  for (double v : x.value().data()) m += v;
  m /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x.value().data()) var += (v - m) * (v - m);
  var /= static_cast<double>(n);
  const double inv_std = 1.0 / std::sqrt(var + eps);
  Tensor out = Tensor::zeros_like(x.value());
  for (std::size_t i = 0; i < n; ++i) out[i] = (x.value()[i] - m) * inv_std;
  return record_op("standardize", std::move(out), {x}, [n, inv_std](Node& node) {
    Tensor* gx = node.grad_of(0);
    if (!gx) return;
    const Tensor& y = node.value;  // y is xhat
    double mg = 0.0, mgy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mg += node.grad[i];
      mgy += node.grad[i] * y[i];
    }
    mg /= static_cast<double>(n);
    mgy /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) (*gx)[i] += inv_std * (node.grad[i] - mg - y[i] * mgy);
  });
}

}  // namespace rhythm::ops
