#include <Eigen/Core>
#include <cmath>
#include <string>

#include "rhythm/error.hpp"
#include "rhythm/ops.hpp"

namespace rhythm::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Var& x, std::size_t rank) {
  if (x.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

// Pointwise y = f(x) with dy/dx = df(x, y).
template <class F, class DF>
Var unary(std::string_view kind, const Var& x, F f, DF df) {
  Tensor out = Tensor::zeros_like(x.value());
  const auto in = x.value().data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return record_op(kind, std::move(out), {x}, [df](Node& n) {
    Tensor* gx = n.grad_of(0);
    if (!gx) return;
    const Tensor& xv = n.in(0);
    for (std::size_t i = 0; i < xv.numel(); ++i) (*gx)[i] += n.grad[i] * df(xv[i], n.value[i]);
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  out += b.value();
  return record_op("add", std::move(out), {a, b}, [](Node& n) {
    if (Tensor* g = n.grad_of(0)) *g += n.grad;
    if (Tensor* g = n.grad_of(1)) *g += n.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return record_op("sub", std::move(out), {a, b}, [](Node& n) {
    if (Tensor* g = n.grad_of(0)) *g += n.grad;
    if (Tensor* g = n.grad_of(1)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return record_op("mul", std::move(out), {a, b}, [](Node& n) {
    if (Tensor* g = n.grad_of(0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i] * n.in(1)[i];
    }
    if (Tensor* g = n.grad_of(1)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i] * n.in(0)[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  return unary("scale", x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Var add_scalar(const Var& x, double value) {
  return unary("add_scalar", x, [value](double v) { return v + value; },
               [](double, double) { return 1.0; });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return record_op("reshape", std::move(out), {x}, [](Node& n) {
    Tensor* g = n.grad_of(0);
    if (!g) return;
    for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i];
  });
}

Var relu(const Var& x) {
  return unary("relu", x, [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var silu(const Var& x) {
  return unary("silu", x, [](double v) { return v * stable_sigmoid(v); },
               [](double v, double) {
                 const double s = stable_sigmoid(v);
                 return s * (1.0 + v * (1.0 - s));
               });
}

Var sigmoid(const Var& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& x) {
  return unary("softplus", x,
               [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
               [](double v, double) { return stable_sigmoid(v); });
}

Var log(const Var& x) {
  return unary("log", x, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Var square(const Var& x) {
  return unary("square", x, [](double v) { return v * v; },
               [](double v, double) { return 2.0 * v; });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return record_op("sum", Tensor::scalar(s), {x}, [](Node& n) {
    Tensor* g = n.grad_of(0);
    if (!g) return;
    const double go = n.grad[0];
    for (auto& v : g->data()) v += go;
  });
}

Var mean(const Var& x) {
  if (x.value().numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().numel()));
}

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({m, n});
  ConstMatMap A(a.value().data().data(), m, k);
  ConstMatMap B(b.value().data().data(), k, n);
  MatMap(out.data().data(), m, n).noalias() = A * B;
  return record_op("matmul", std::move(out), {a, b}, [m, k, n](Node& node) {
    ConstMatMap G(node.grad.data().data(), m, n);
    if (Tensor* ga = node.grad_of(0)) {
      ConstMatMap B(node.in(1).data().data(), k, n);
      MatMap(ga->data().data(), m, k).noalias() += G * B.transpose();
    }
    if (Tensor* gb = node.grad_of(1)) {
      ConstMatMap A(node.in(0).data().data(), m, k);
      MatMap(gb->data().data(), k, n).noalias() += A.transpose() * G;
    }
  });
}

Var bias_add(const Var& x, const Var& bias) {
  require_rank("bias_add", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (bias.value().numel() != cols) {
    throw ShapeError("bias_add: bias " + shape_str(bias.shape()) + " for " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += bias.value()[c];
  return record_op("bias_add", std::move(out), {x, bias}, [rows, cols](Node& n) {
    if (Tensor* gx = n.grad_of(0)) *gx += n.grad;
    if (Tensor* gb = n.grad_of(1)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += n.grad.at(r, c);
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  return bias_add(matmul(x, weight), bias);
}

}  // namespace rhythm::ops
