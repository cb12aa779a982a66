#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rhythm/tensor.hpp"

namespace rhythm {

class Tape;

// One value in a computation. Op nodes keep their inputs alive only while
// they are recorded for differentiation; constant results drop them.
struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  std::string_view kind = "leaf";
  Tape* tape = nullptr;
  bool requires_grad = false;

  const Tensor& in(std::size_t i) const { return inputs[i]->value; }
  // Gradient slot of input i, zero-initialised on first use; nullptr when
  // that input does not require a gradient.
  Tensor* grad_of(std::size_t i);
};

/// Handle to a node. Cheap to copy; copies alias the same node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  double item() const { return node_->value.item(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool valid() const { return static_cast<bool>(node_); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// A value that never receives a gradient.
Var constant(Tensor value);

class GradientMap {
 public:
  const Tensor& operator[](const Var& leaf) const;
  bool contains(const Var& leaf) const { return grads_.count(leaf.node()) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<const Node*, Tensor> grads_;
};

/// Straight-line reverse-mode tape. Nodes are appended in execution order,
/// which is a topological order by construction.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);

  // Computes d(loss)/d(leaf) for every requires_grad leaf and clears the tape.
  GradientMap backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); leaves_.clear(); }

 private:
  friend Var record_op(std::string_view, Tensor, std::vector<Var>, std::function<void(Node&)>);
  std::vector<std::shared_ptr<Node>> nodes_;
  std::vector<std::shared_ptr<Node>> leaves_;
};

// Creates the output node of an op. The op is recorded on the tape shared by
// its gradient-requiring inputs, or returned as a constant when none needs a
// gradient. Throws NumericError on non-finite output.
Var record_op(std::string_view kind, Tensor out, std::vector<Var> inputs,
              std::function<void(Node&)> backward);

using ScalarFn = std::function<Var(std::span<const Var>)>;

/// Max over all input coordinates of
/// |analytic - central difference| / max(|analytic|, |cd|, floor).
double grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double eps = 1e-5,
                  double floor = 1e-8);

}  // namespace rhythm
