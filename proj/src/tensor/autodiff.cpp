#include "rhythm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rhythm/error.hpp"

namespace rhythm {

Tensor* Node::grad_of(std::size_t i) {
  Node& input = *inputs[i];
  if (!input.requires_grad) return nullptr;
  if (input.grad.empty() && !input.value.empty()) input.grad = Tensor::zeros_like(input.value);
  return &input.grad;
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->kind = "const";
  return Var(std::move(node));
}

const Tensor& GradientMap::operator[](const Var& leaf) const {
  auto it = grads_.find(leaf.node());
  if (it == grads_.end()) throw Error("no gradient recorded for this leaf");
  return it->second;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  if (requires_grad) {
    node->tape = this;
    leaves_.push_back(node);
  }
  return Var(std::move(node));
}

GradientMap Tape::backward(const Var& loss) {
  if (!loss.valid() || loss.value().numel() != 1) {
    throw ShapeError("backward needs a scalar loss");
  }
  if (nodes_.empty()) throw Error("backward on an empty tape");
  if (!loss.requires_grad() || loss.node()->tape != this) {
    throw Error("loss is detached from this tape");
  }

  for (auto& n : nodes_) n->grad = Tensor();
  for (auto& n : leaves_) n->grad = Tensor::zeros_like(n->value);
  loss.node()->grad = Tensor::full(loss.shape(), 1.0);

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.grad.empty()) continue;  // not upstream of the loss
    n.backward(n);
  }

  GradientMap out;
  for (auto& leaf : leaves_) out.grads_.emplace(leaf.get(), std::move(leaf->grad));
  // Interior nodes hold saved activations; drop them with the tape.
  for (auto& n : nodes_) {
    n->grad = Tensor();
    n->backward = nullptr;
  }
  clear();
  return out;
}

Var record_op(std::string_view kind, Tensor out, std::vector<Var> inputs,
              std::function<void(Node&)> backward) {
  if (!out.all_finite()) {
    throw NumericError("non-finite output from op " + std::string(kind));
  }
  for (const auto& in : inputs) {
    if (in.valid() && in.value().dtype() == DType::f32) {
      out = out.as_dtype(DType::f32);
      break;
    }
  }

  Tape* tape = nullptr;
  for (const auto& in : inputs) {
    if (!in.requires_grad()) continue;
    if (tape && in.node()->tape != tape) {
      throw Error("op " + std::string(kind) + " mixes inputs from different tapes");
    }
    tape = in.node()->tape;
  }

  auto node = std::make_shared<Node>();
  node->value = std::move(out);
  node->kind = kind;
  if (tape) {
    node->requires_grad = true;
    node->tape = tape;
    node->backward = std::move(backward);
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.shared());
    tape->nodes_.push_back(node);
  }
  return Var(std::move(node));
}

double grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double eps, double floor) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  Var loss = fn(leaves);
  GradientMap grads = tape.backward(loss);

  auto evaluate = [&](const std::vector<Tensor>& args) {
    std::vector<Var> cs;
    cs.reserve(args.size());
    for (const auto& t : args) cs.push_back(constant(t));
    double v = fn(cs).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite intermediate");
    return v;
  };

  double worst = 0.0;
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& analytic = grads[leaves[k]];
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const double x0 = work[k][i];
      work[k][i] = x0 + eps;
      const double fp = evaluate(work);
      work[k][i] = x0 - eps;
      const double fm = evaluate(work);
      work[k][i] = x0;
      const double cd = (fp - fm) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(cd), floor});
      worst = std::max(worst, std::abs(a - cd) / denom);
    }
  }
  return worst;
}

}  // namespace rhythm
