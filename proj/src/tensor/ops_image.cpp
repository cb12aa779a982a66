#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "rhythm/error.hpp"
#include "rhythm/ops.hpp"

namespace rhythm::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct ConvGeometry {
  std::size_t n, ci, h, w, co, k, stride, pad, ho, wo;
  std::size_t patch() const { return ci * k * k; }
  std::size_t plane() const { return ho * wo; }
};

// Images per GEMM. Small output planes (4x4 at the end of the stem) would
// otherwise turn every product into a sliver; large ones are capped by the
// column buffer budget.
constexpr std::size_t kMaxImagesPerBlock = 32;
constexpr std::size_t kColumnBudget = std::size_t{1} << 21;  // doubles

std::size_t images_per_block(const ConvGeometry& g) {
  return std::clamp<std::size_t>(kColumnBudget / (g.patch() * g.plane()), 1, kMaxImagesPerBlock);
}

// col[(c*k + ky)*k + kx, b*plane + oy*wo + ox] for images [first, first+count)
void im2col(const ConvGeometry& g, const double* x, std::size_t first, std::size_t count,
            RowMat& col) {
  col.resize(static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(count * g.plane()));
  const std::size_t cols = count * g.plane();
  for (std::size_t c = 0; c < g.ci; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col.data() + ((c * g.k + ky) * g.k + kx) * cols;
        for (std::size_t b = 0; b < count; ++b) {
          const double* img = x + ((first + b) * g.ci + c) * g.h * g.w;
          double* dst = row + b * g.plane();
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) &&
                                  ix < static_cast<long>(g.w);
              dst[oy * g.wo + ox] = inside ? img[iy * static_cast<long>(g.w) + ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const RowMat& col, std::size_t first, std::size_t count,
                double* gx) {
  const std::size_t cols = count * g.plane();
  for (std::size_t c = 0; c < g.ci; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col.data() + ((c * g.k + ky) * g.k + kx) * cols;
        for (std::size_t b = 0; b < count; ++b) {
          double* img = gx + ((first + b) * g.ci + c) * g.h * g.w;
          const double* src = row + b * g.plane();
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
              img[iy * static_cast<long>(g.w) + ix] += src[oy * g.wo + ox];
            }
          }
        }
      }
    }
  }
}

void require_images(const char* op, const Var& x) {
  if (x.value().rank() != 4) {
    throw ShapeError(std::string(op) + ": expected [N, C, H, W], got " + shape_str(x.shape()));
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opts) {
  require_images("conv2d", x);
  const auto& ws = weight.shape();
  if (ws.size() != 4 || ws[2] != ws[3] || ws[1] != x.dim(1)) {
    throw ShapeError("conv2d: weight " + shape_str(ws) + " for input " + shape_str(x.shape()));
  }
  if (bias.value().numel() != ws[0]) throw ShapeError("conv2d: bias size mismatch");
  if (opts.stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), ws[0], ws[2], opts.stride, opts.padding, 0, 0};
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;

  Tensor out({g.n, g.co, g.ho, g.wo});
  ConstMatMap W(weight.value().data().data(), g.co, g.patch());
  RowMat col, prod;
  const std::size_t block = images_per_block(g);
  for (std::size_t first = 0; first < g.n; first += block) {
    const std::size_t count = std::min(block, g.n - first);
    im2col(g, x.value().data().data(), first, count, col);
    prod.noalias() = W * col;
    for (std::size_t b = 0; b < count; ++b) {
      for (std::size_t o = 0; o < g.co; ++o) {
        double* dst = out.data().data() + ((first + b) * g.co + o) * g.plane();
        const double* src = prod.data() + o * count * g.plane() + b * g.plane();
        const double bo = bias.value()[o];
        for (std::size_t p = 0; p < g.plane(); ++p) dst[p] = src[p] + bo;
      }
    }
  }

  return record_op("conv2d", std::move(out), {x, weight, bias}, [g](Node& n) {
    Tensor* gx = n.grad_of(0);
    Tensor* gw = n.grad_of(1);
    Tensor* gb = n.grad_of(2);
    ConstMatMap W(n.in(1).data().data(), g.co, g.patch());
    RowMat col, gout, gcol;
    const std::size_t block = images_per_block(g);
    for (std::size_t first = 0; first < g.n; first += block) {
      const std::size_t count = std::min(block, g.n - first);
      gout.resize(static_cast<Eigen::Index>(g.co), static_cast<Eigen::Index>(count * g.plane()));
      for (std::size_t b = 0; b < count; ++b)
        for (std::size_t o = 0; o < g.co; ++o)
          std::copy_n(n.grad.data().data() + ((first + b) * g.co + o) * g.plane(), g.plane(),
                      gout.data() + o * count * g.plane() + b * g.plane());
      if (gb) {
        for (std::size_t o = 0; o < g.co; ++o) (*gb)[o] += gout.row(static_cast<Eigen::Index>(o)).sum();
      }
      if (gw) {
        im2col(g, n.in(0).data().data(), first, count, col);
        MatMap(gw->data().data(), g.co, g.patch()).noalias() += gout * col.transpose();
      }
      if (gx) {
        gcol.noalias() = W.transpose() * gout;
        col2im_add(g, gcol, first, count, gx->data().data());
      }
    }
  });
}

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
                bool train) {
  require_images("batchnorm2d", x);
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.value().numel() != c || beta.value().numel() != c) {
    throw ShapeError("batchnorm2d: affine parameters do not match channel count");
  }
  if (state.running_mean.numel() != c || state.running_var.numel() != c) {
    throw ShapeError("batchnorm2d: running statistics do not match channel count");
  }
  if (train && n < 2) throw ShapeError("batchnorm2d: train mode needs at least 2 images");

  const double count = static_cast<double>(n * plane);
  std::vector<double> mu(c), inv_std(c);
  const Tensor& xv = x.value();
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (train) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = xv.data().data() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
      }
      const double m = s / count;
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = xv.data().data() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) ss += (p[j] - m) * (p[j] - m);
      }
      const double var = ss / count;
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = count > 1 ? ss / (count - 1.0) : var;
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * m;
      state.running_var[ch] =
          (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    } else {
      mu[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
    }
  }

  Tensor out = Tensor::zeros_like(xv);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = xv.data().data() + (i * c + ch) * plane;
      double* q = out.data().data() + (i * c + ch) * plane;
      const double a = gamma.value()[ch] * inv_std[ch];
      const double b = beta.value()[ch] - a * mu[ch];
      for (std::size_t j = 0; j < plane; ++j) q[j] = a * p[j] + b;
    }
  }

  return record_op("batchnorm2d", std::move(out), {x, gamma, beta},
                   [n, c, plane, count, train, mu, inv_std](Node& node) {
    const Tensor& xv = node.in(0);
    const Tensor& gam = node.in(1);
    Tensor* gx = node.grad_of(0);
    Tensor* gg = node.grad_of(1);
    Tensor* gbeta = node.grad_of(2);
    for (std::size_t ch = 0; ch < c; ++ch) {
      // sum(g) and sum(g * xhat) over the channel
      double sg = 0.0, sgx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = xv.data().data() + (i * c + ch) * plane;
        const double* g = node.grad.data().data() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          sg += g[j];
          sgx += g[j] * (p[j] - mu[ch]) * inv_std[ch];
        }
      }
      if (gg) (*gg)[ch] += sgx;
      if (gbeta) (*gbeta)[ch] += sg;
      if (!gx) continue;
      const double a = gam[ch] * inv_std[ch];
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = xv.data().data() + (i * c + ch) * plane;
        const double* g = node.grad.data().data() + (i * c + ch) * plane;
        double* dst = gx->data().data() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          if (train) {
            const double xhat = (p[j] - mu[ch]) * inv_std[ch];
            dst[j] += a * (g[j] - sg / count - xhat * sgx / count);
          } else {
            dst[j] += a * g[j];
          }
        }
      }
    }
  });
}

Var maxpool2d(const Var& x, std::size_t k) {
  require_images("maxpool2d", x);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k == 0 || h % k != 0 || w % k != 0) {
    throw ShapeError("maxpool2d: " + shape_str(x.shape()) + " not divisible by " + std::to_string(k));
  }
  const std::size_t ho = h / k, wo = w / k;
  Tensor out({n, c, ho, wo});
  std::vector<std::size_t> argmax(out.numel());
  const double* src = x.value().data().data();
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = p * h * w + (oy * k) * w + ox * k;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = p * h * w + (oy * k + dy) * w + ox * k + dx;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = p * ho * wo + oy * wo + ox;
        out[o] = src[best];
        argmax[o] = best;
      }
    }
  }
  return record_op("maxpool2d", std::move(out), {x}, [argmax = std::move(argmax)](Node& node) {
    Tensor* gx = node.grad_of(0);
    if (!gx) return;
    for (std::size_t o = 0; o < argmax.size(); ++o) (*gx)[argmax[o]] += node.grad[o];
  });
}

Var global_avgpool_spatial(const Var& x) {
  require_images("global_avgpool_spatial", x);
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out({n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) s += x.value()[p * plane + j];
    out[p] = s / static_cast<double>(plane);
  }
  return record_op("global_avgpool_spatial", std::move(out), {x}, [n, c, plane](Node& node) {
    Tensor* gx = node.grad_of(0);
    if (!gx) return;
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t p = 0; p < n * c; ++p)
      for (std::size_t j = 0; j < plane; ++j) (*gx)[p * plane + j] += node.grad[p] * inv;
  });
}

Var l1_normalize_spatial(const Var& x, double scale) {
  require_images("l1_normalize_spatial", x);
  const std::size_t planes = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros_like(x.value());
  std::vector<double> norms(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) s += std::abs(x.value()[p * plane + j]);
    if (s == 0.0) throw NumericError("l1_normalize_spatial: zero plane");
    norms[p] = s;
    for (std::size_t j = 0; j < plane; ++j) out[p * plane + j] = scale * x.value()[p * plane + j] / s;
  }
  return record_op("l1_norm", std::move(out), {x}, [planes, plane, scale, norms](Node& node) {
    Tensor* gx = node.grad_of(0);
    if (!gx) return;
    const Tensor& xv = node.in(0);
    for (std::size_t p = 0; p < planes; ++p) {
      // y_j = s x_j / L, dL/dx_k = sign(x_k)
      double dot = 0.0;
      for (std::size_t j = 0; j < plane; ++j) dot += node.grad[p * plane + j] * xv[p * plane + j];
      const double L = norms[p];
      for (std::size_t k = 0; k < plane; ++k) {
        const double xk = xv[p * plane + k];
        const double sign = xk > 0 ? 1.0 : (xk < 0 ? -1.0 : 0.0);
        (*gx)[p * plane + k] += scale * (node.grad[p * plane + k] / L - sign * dot / (L * L));
      }
    }
  });
}

}  // namespace rhythm::ops
