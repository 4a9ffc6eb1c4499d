#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dbltr/errors.hpp"

namespace dbltr {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // lazily materialized, same length as data
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // empty for leaves

  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Handle to one node of a reverse-mode differentiation graph over dense
// arrays of 64-bit reals. Copies share the node; graphs are single-owner
// within a training step and carry no internal locking.
class Value {
 public:
  Value() = default;

  static Value leaf(Shape shape, std::vector<double> data);
  static Value scalar(double v);
  static Value zeros(Shape shape);

  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data.size(); }
  std::size_t rank() const { return node_->shape.size(); }

  const std::vector<double>& data() const { return node_->data; }
  // Leaf data may be perturbed in place (finite differencing, optimizer
  // updates); the graph must be rebuilt for new forward values.
  std::vector<double>& mutable_data() { return node_->data; }

  // Accumulated gradient; materializes as zeros on first access.
  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

  bool is_leaf() const { return node_->is_leaf(); }
  bool defined() const { return node_ != nullptr; }

  // The single element of a scalar ([] or [1]) value.
  double item() const;

  detail::Node* node() const { return node_.get(); }

 private:
  explicit Value(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Value make_op(Shape shape, std::vector<Value> parents,
                       std::function<void(detail::Node&)> backprop);
};

// --- forward ops -----------------------------------------------------------
// Elementwise ops accept equal shapes or one scalar operand ([] or [1]);
// anything else is a shape error naming the op and both shapes.

Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value neg(const Value& a);
Value scalar_mul(const Value& a, double c);
Value exp(const Value& a);
Value log(const Value& a);
Value sqrt(const Value& a);  // gradient at input 0 defined as 0
Value relu(const Value& a);  // gradient at input 0 defined as 0
Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);
Value sum(const Value& a);
Value mean(const Value& a);
Value squared_l2_distance(const Value& a, const Value& b);
Value concat_rows(const std::vector<Value>& rows);
Value broadcast_rows(const Value& v, std::size_t rows);
Value row(const Value& m, std::size_t index);
Value reshape(const Value& a, Shape shape);

// exp(v - max(v)) normalized; the shift is a detached constant, which leaves
// both the values and the gradients of softmax unchanged.
Value softmax(const Value& v);
Value logsumexp(const Value& v);

// --- reverse pass ----------------------------------------------------------

// Seeds d(root)/d(root) = 1 and accumulates d(root)/d(leaf) into every
// reachable leaf's grad. Interior grads are scratch and reset per call; leaf
// grads accumulate across calls until zero_grad(). Root must be scalar.
void backward(const Value& root);

// Max over all leaf coordinates of |analytic - central difference| /
// max(1, |analytic|). `rebuild` must reconstruct the scalar output from the
// leaves' current data on every call.
double finite_diff_check(const std::function<Value()>& rebuild,
                         std::span<const Value> leaves, double eps);

}  // namespace dbltr
