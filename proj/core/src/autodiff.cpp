#include "dbltr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

namespace dbltr {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

namespace {

bool is_scalar_shape(const Shape& s) {
  return s.empty() || (s.size() == 1 && s[0] == 1);
}

void check_finite(const char* who, const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(std::string(who) + ": non-finite input");
}

}  // namespace

Value make_op(Shape shape, std::vector<Value> parents,
              std::function<void(detail::Node&)> backprop) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data.resize(shape_numel(node->shape));
  node->parents.reserve(parents.size());
  for (auto& p : parents) node->parents.push_back(p.node_);
  node->backprop = std::move(backprop);
  return Value(std::move(node));
}

Value Value::leaf(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size())
    throw ValidationError("leaf: shape " + shape_str(shape) + " expects " +
                          std::to_string(shape_numel(shape)) + " values, got " +
                          std::to_string(data.size()));
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return Value(std::move(node));
}

Value Value::scalar(double v) { return leaf({}, {v}); }

Value Value::zeros(Shape shape) {
  std::vector<double> data(shape_numel(shape), 0.0);
  return leaf(std::move(shape), std::move(data));
}

double Value::item() const {
  if (!is_scalar_shape(node_->shape))
    throw ValidationError("item: value of shape " + shape_str(node_->shape) +
                          " is not scalar");
  return node_->data[0];
}

// --- elementwise binary ops --------------------------------------------------

namespace {

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast elementwise_mode(const char* opname, const Value& a, const Value& b) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (is_scalar_shape(a.shape())) return Broadcast::kLeftScalar;
  if (is_scalar_shape(b.shape())) return Broadcast::kRightScalar;
  throw ValidationError(std::string(opname) + ": shapes " + shape_str(a.shape()) +
                        " and " + shape_str(b.shape()) + " do not conform");
}

// Applies fwd over the (possibly scalar-broadcast) operands; bwd_a/bwd_b map
// (upstream grad, a_i, b_i, out_i) to the two local gradient contributions.
template <class Fwd, class BwdA, class BwdB>
Value binary_op(const char* opname, const Value& a, const Value& b, Fwd fwd,
                BwdA bwd_a, BwdB bwd_b) {
  const Broadcast mode = elementwise_mode(opname, a, b);
  const Shape& out_shape = mode == Broadcast::kLeftScalar ? b.shape() : a.shape();
  Value out = make_op(out_shape, {a, b}, {});
  auto* n = out.node();
  const std::size_t count = n->data.size();
  const auto& da = a.data();
  const auto& db = b.data();
  for (std::size_t i = 0; i < count; ++i) {
    const double x = mode == Broadcast::kLeftScalar ? da[0] : da[i];
    const double y = mode == Broadcast::kRightScalar ? db[0] : db[i];
    n->data[i] = fwd(x, y);
  }
  n->backprop = [mode, bwd_a, bwd_b](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      const double g = self.grad[i];
      const double x = mode == Broadcast::kLeftScalar ? pa.data[0] : pa.data[i];
      const double y = mode == Broadcast::kRightScalar ? pb.data[0] : pb.data[i];
      const double o = self.data[i];
      pa.grad[mode == Broadcast::kLeftScalar ? 0 : i] += bwd_a(g, x, y, o);
      pb.grad[mode == Broadcast::kRightScalar ? 0 : i] += bwd_b(g, x, y, o);
    }
  };
  return out;
}

template <class Fwd, class Bwd>
Value unary_op(const Value& a, Fwd fwd, Bwd bwd) {
  Value out = make_op(a.shape(), {a}, {});
  auto* n = out.node();
  for (std::size_t i = 0; i < n->data.size(); ++i) n->data[i] = fwd(a.data()[i]);
  n->backprop = [bwd](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.data.size(); ++i)
      p.grad[i] += bwd(self.grad[i], p.data[i], self.data[i]);
  };
  return out;
}

}  // namespace

Value add(const Value& a, const Value& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double, double) { return g; },
      [](double g, double, double, double) { return g; });
}

Value sub(const Value& a, const Value& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double, double) { return g; },
      [](double g, double, double, double) { return -g; });
}

Value mul(const Value& a, const Value& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y, double) { return g * y; },
      [](double g, double x, double, double) { return g * x; });
}

Value div(const Value& a, const Value& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double g, double, double y, double) { return g / y; },
      [](double g, double, double y, double o) { return -g * o / y; });
}

Value neg(const Value& a) {
  return unary_op(
      a, [](double x) { return -x; },
      [](double g, double, double) { return -g; });
}

Value scalar_mul(const Value& a, double c) {
  return unary_op(
      a, [c](double x) { return c * x; },
      [c](double g, double, double) { return c * g; });
}

Value exp(const Value& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); },
      [](double g, double, double o) { return g * o; });
}

Value log(const Value& a) {
  return unary_op(
      a, [](double x) { return std::log(x); },
      [](double g, double x, double) { return g / x; });
}

Value sqrt(const Value& a) {
  // d/dx sqrt at 0 is unbounded; define it as 0 (same convention as relu) so
  // a query landing exactly on a prototype cannot poison a training step.
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double g, double x, double o) { return x == 0.0 ? 0.0 : g / (2.0 * o); });
}

Value relu(const Value& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double g, double x, double) { return x > 0.0 ? g : 0.0; });
}

Value matmul(const Value& a, const Value& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ValidationError("matmul: expects rank-2 operands, got " +
                          shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw ValidationError("matmul: inner dimensions differ: " + shape_str(a.shape()) +
                          " x " + shape_str(b.shape()));
  Value out = make_op({m, n}, {a, b}, {});
  auto* node = out.node();
  const auto& da = a.data();
  const auto& db = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double x = da[i * k + l];
      if (x == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) node->data[i * n + j] += x * db[l * n + j];
    }
  node->backprop = [m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    // dA = G * B^T, dB = A^T * G
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double g = self.grad[i * n + j];
        if (g == 0.0) continue;
        for (std::size_t l = 0; l < k; ++l) {
          pa.grad[i * k + l] += g * pb.data[l * n + j];
          pb.grad[l * n + j] += g * pa.data[i * k + l];
        }
      }
  };
  return out;
}

Value transpose(const Value& a) {
  if (a.rank() != 2)
    throw ValidationError("transpose: expects rank-2 operand, got " + shape_str(a.shape()));
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Value out = make_op({c, r}, {a}, {});
  auto* node = out.node();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) node->data[j * r + i] = a.data()[i * c + j];
  node->backprop = [r, c](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[j * r + i];
  };
  return out;
}

Value sum(const Value& a) {
  Value out = make_op({}, {a}, {});
  double acc = 0.0;
  for (double x : a.data()) acc += x;
  out.node()->data[0] = acc;
  out.node()->backprop = [](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    const double g = self.grad[0];
    for (double& pg : p.grad) pg += g;
  };
  return out;
}

Value mean(const Value& a) {
  if (a.size() == 0) throw ValidationError("mean: empty operand");
  const double inv = 1.0 / static_cast<double>(a.size());
  Value out = make_op({}, {a}, {});
  double acc = 0.0;
  for (double x : a.data()) acc += x;
  out.node()->data[0] = acc * inv;
  out.node()->backprop = [inv](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    const double g = self.grad[0] * inv;
    for (double& pg : p.grad) pg += g;
  };
  return out;
}

Value squared_l2_distance(const Value& a, const Value& b) {
  if (a.shape() != b.shape())
    throw ValidationError("squared_l2_distance: shapes " + shape_str(a.shape()) +
                          " and " + shape_str(b.shape()) + " differ");
  Value out = make_op({}, {a, b}, {});
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  out.node()->data[0] = acc;
  out.node()->backprop = [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < pa.data.size(); ++i) {
      const double d = 2.0 * (pa.data[i] - pb.data[i]) * g;
      pa.grad[i] += d;
      pb.grad[i] -= d;
    }
  };
  return out;
}

Value concat_rows(const std::vector<Value>& rows) {
  if (rows.empty()) throw ValidationError("concat_rows: no inputs");
  const Shape& rs = rows[0].shape();
  if (rs.size() > 1)
    throw ValidationError("concat_rows: inputs must be scalars or vectors, got " +
                          shape_str(rs));
  for (const Value& r : rows)
    if (r.shape() != rs)
      throw ValidationError("concat_rows: mixed input shapes " + shape_str(rs) +
                            " and " + shape_str(r.shape()));
  const std::size_t k = rows.size();
  const std::size_t len = shape_numel(rs);
  const bool scalars = is_scalar_shape(rs);
  Shape out_shape = scalars ? Shape{k} : Shape{k, rs[0]};
  Value out = make_op(std::move(out_shape), rows, {});
  auto* node = out.node();
  for (std::size_t i = 0; i < k; ++i)
    std::copy(rows[i].data().begin(), rows[i].data().end(),
              node->data.begin() + static_cast<std::ptrdiff_t>(i * len));
  node->backprop = [len](detail::Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = *self.parents[i];
      p.ensure_grad();
      for (std::size_t j = 0; j < len; ++j) p.grad[j] += self.grad[i * len + j];
    }
  };
  return out;
}

Value broadcast_rows(const Value& v, std::size_t rows) {
  if (v.rank() != 1)
    throw ValidationError("broadcast_rows: expects a vector, got " + shape_str(v.shape()));
  const std::size_t len = v.shape()[0];
  Value out = make_op({rows, len}, {v}, {});
  auto* node = out.node();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(v.data().begin(), v.data().end(),
              node->data.begin() + static_cast<std::ptrdiff_t>(r * len));
  node->backprop = [rows, len](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) p.grad[j] += self.grad[r * len + j];
  };
  return out;
}

Value row(const Value& m, std::size_t index) {
  if (m.rank() != 2)
    throw ValidationError("row: expects rank-2 operand, got " + shape_str(m.shape()));
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  if (index >= r)
    throw ValidationError("row: index " + std::to_string(index) + " out of range for " +
                          shape_str(m.shape()));
  Value out = make_op({c}, {m}, {});
  std::copy(m.data().begin() + static_cast<std::ptrdiff_t>(index * c),
            m.data().begin() + static_cast<std::ptrdiff_t>((index + 1) * c),
            out.node()->data.begin());
  out.node()->backprop = [index, c](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t j = 0; j < c; ++j) p.grad[index * c + j] += self.grad[j];
  };
  return out;
}

Value reshape(const Value& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ValidationError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                          shape_str(shape));
  Value out = make_op(std::move(shape), {a}, {});
  out.node()->data = a.data();
  out.node()->backprop = [](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  };
  return out;
}

Value softmax(const Value& v) {
  if (v.rank() != 1) throw ValidationError("softmax: expects a vector, got " + shape_str(v.shape()));
  if (v.size() == 0) throw ValidationError("softmax: empty vector");
  check_finite("softmax", v.data());
  const double m = *std::max_element(v.data().begin(), v.data().end());
  Value shifted = sub(v, Value::scalar(m));
  Value e = exp(shifted);
  return div(e, sum(e));
}

Value logsumexp(const Value& v) {
  if (v.rank() != 1) throw ValidationError("logsumexp: expects a vector, got " + shape_str(v.shape()));
  if (v.size() == 0) throw ValidationError("logsumexp: empty vector");
  check_finite("logsumexp", v.data());
  const double m = *std::max_element(v.data().begin(), v.data().end());
  Value shifted = sub(v, Value::scalar(m));
  return add(log(sum(exp(shifted))), Value::scalar(m));
}

// --- reverse pass ------------------------------------------------------------

namespace {

// Post-order (inputs first) over the DAG, each node exactly once.
std::vector<detail::Node*> topo_order(detail::Node* root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited{root};
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      detail::Node* p = n->parents[i++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Value& root) {
  detail::Node* r = root.node();
  if (!is_scalar_shape(r->shape))
    throw ValidationError("backward: root has shape " + shape_str(r->shape) +
                          ", expected a scalar");
  std::vector<detail::Node*> order = topo_order(r);
  // Interior grads are scratch from any previous pass; leaf grads accumulate.
  for (detail::Node* n : order) {
    n->ensure_grad();
    if (!n->is_leaf()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
  r->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

double finite_diff_check(const std::function<Value()>& rebuild,
                         std::span<const Value> leaves, double eps) {
  if (eps <= 0.0) throw ValidationError("finite_diff_check: eps must be positive");
  Value root = rebuild();
  if (!std::isfinite(root.item()))
    throw NumericError("finite_diff_check: non-finite function output");
  std::vector<std::vector<double>> analytic;
  for (const Value& l : leaves) const_cast<Value&>(l).zero_grad();
  backward(root);
  analytic.reserve(leaves.size());
  for (const Value& l : leaves) analytic.push_back(l.grad());

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& data = const_cast<Value&>(leaves[li]).mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double f_plus = rebuild().item();
      data[i] = saved - eps;
      const double f_minus = rebuild().item();
      data[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        throw NumericError("finite_diff_check: non-finite function output");
      const double fd = (f_plus - f_minus) / (2.0 * eps);
      const double a = analytic[li][i];
      const double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace dbltr
