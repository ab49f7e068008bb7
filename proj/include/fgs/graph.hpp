#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "fgs/ops.hpp"
#include "fgs/tensor.hpp"

namespace fgs {

using NodeId = std::size_t;

enum class OpKind { leaf, matmul, matmul_nt, add_bias, add, scale, tanh, mse };

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::matmul_nt: return "matmul_nt";
    case OpKind::add_bias: return "add_bias";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::tanh: return "tanh";
    case OpKind::mse: return "mse";
  }
  return "?";
}

/// Result of a backward pass. Nodes the pass never reached (or that do not
/// require a gradient) have no entry; get() returns zeros for them.
class Gradients {
 public:
  Gradients(std::vector<std::optional<Tensor>> grads, std::vector<Shape> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  const Tensor* find(NodeId id) const {
    return id < grads_.size() && grads_[id] ? &*grads_[id] : nullptr;
  }

  bool contains(NodeId id) const { return find(id) != nullptr; }

  Tensor get(NodeId id) const {
    if (const Tensor* g = find(id)) return *g;
    return Tensor(shapes_.at(id));
  }

 private:
  std::vector<std::optional<Tensor>> grads_;
  std::vector<Shape> shapes_;
};

/// Tape of forward values. Nodes are appended in evaluation order, so node
/// ids are already a topological order and backward walks them in reverse.
class Graph {
 public:
  NodeId leaf(Tensor value, bool requires_grad = false) {
    if (!value.all_finite()) throw NonFiniteError("leaf of shape " + to_string(value.shape()) + " has non-finite entries");
    return push(OpKind::leaf, {}, 0, std::move(value), requires_grad);
  }

  NodeId matmul(NodeId a, NodeId b) { return binary(OpKind::matmul, a, b, ops::matmul(value(a), value(b))); }

  // a * b^T; used for x * W^T with W stored [out, in].
  NodeId matmul_nt(NodeId a, NodeId b) { return binary(OpKind::matmul_nt, a, b, ops::matmul_nt(value(a), value(b))); }

  NodeId add_bias(NodeId x, NodeId bias) {
    const Tensor& xv = value(x);
    const Tensor& bv = value(bias);
    ops::require_matrix(xv, "add_bias");
    if (bv.rank() != 1 || bv.size() != xv.cols()) throw ops::mismatch("add_bias", xv, bv);
    Tensor out = xv;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += bv[j];
    return binary(OpKind::add_bias, x, bias, std::move(out));
  }

  NodeId add(NodeId a, NodeId b) {
    Tensor out = value(a);
    ops::add_inplace(out, value(b));
    return binary(OpKind::add, a, b, std::move(out));
  }

  NodeId scale(NodeId a, double s) {
    NodeId id = unary(OpKind::scale, a, ops::scaled(value(a), s));
    nodes_[id].factor = s;
    return id;
  }

  NodeId tanh(NodeId a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return unary(OpKind::tanh, a, std::move(out));
  }

  // Mean of squared residuals over every element.
  NodeId mse(NodeId pred, NodeId target) {
    const Tensor& p = value(pred);
    const Tensor& t = value(target);
    if (p.shape() != t.shape()) throw ops::mismatch("mse", p, t);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double r = p[i] - t[i];
      s += r * r;
    }
    return binary(OpKind::mse, pred, target, Tensor::scalar(s / static_cast<double>(p.size())));
  }

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  OpKind kind(NodeId id) const { return nodes_.at(id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Gradients backward(NodeId loss) const {
    const Tensor& lv = value(loss);
    if (lv.size() != 1) throw ShapeError("backward requires a scalar loss, got shape " + to_string(lv.shape()));
    return backward_from(loss, Tensor(lv.shape(), 1.0));
  }

  /// Backpropagates an externally supplied gradient of `output`. This is how
  /// the client half of a split model consumes the cut-layer gradient.
  Gradients backward_from(NodeId output, const Tensor& upstream) const {
    if (upstream.shape() != value(output).shape()) throw ops::mismatch("backward_from", value(output), upstream);
    std::vector<std::optional<Tensor>> grads(nodes_.size());
    if (nodes_[output].requires_grad) grads[output] = upstream;

    for (std::size_t k = output + 1; k-- > 0;) {
      const Node& n = nodes_[k];
      if (!grads[k] || n.op == OpKind::leaf) continue;
      const Tensor& g = *grads[k];
      switch (n.op) {
        case OpKind::matmul:
          accumulate(grads, n.inputs[0], [&] { return ops::matmul_nt(g, value(n.inputs[1])); });
          accumulate(grads, n.inputs[1], [&] { return ops::matmul_tn(value(n.inputs[0]), g); });
          break;
        case OpKind::matmul_nt:
          accumulate(grads, n.inputs[0], [&] { return ops::matmul(g, value(n.inputs[1])); });
          accumulate(grads, n.inputs[1], [&] { return ops::matmul_tn(g, value(n.inputs[0])); });
          break;
        case OpKind::add_bias:
          accumulate(grads, n.inputs[0], [&] { return g; });
          accumulate(grads, n.inputs[1], [&] {
            Tensor db({g.cols()});
            for (std::size_t i = 0; i < g.rows(); ++i)
              for (std::size_t j = 0; j < g.cols(); ++j) db[j] += g.at(i, j);
            return db;
          });
          break;
        case OpKind::add:
          accumulate(grads, n.inputs[0], [&] { return g; });
          accumulate(grads, n.inputs[1], [&] { return g; });
          break;
        case OpKind::scale:
          accumulate(grads, n.inputs[0], [&] { return ops::scaled(g, n.factor); });
          break;
        case OpKind::tanh:
          accumulate(grads, n.inputs[0], [&] {
            Tensor d = g;
            for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 1.0 - n.value[i] * n.value[i];
            return d;
          });
          break;
        case OpKind::mse: {
          const Tensor& p = value(n.inputs[0]);
          const Tensor& t = value(n.inputs[1]);
          const double c = 2.0 * g.item() / static_cast<double>(p.size());
          Tensor dp(p.shape());
          for (std::size_t i = 0; i < p.size(); ++i) dp[i] = c * (p[i] - t[i]);
          if (nodes_[n.inputs[1]].requires_grad) accumulate(grads, n.inputs[1], [&] { return ops::scaled(dp, -1.0); });
          accumulate(grads, n.inputs[0], [&] { return dp; });
          break;
        }
        case OpKind::leaf:
          break;
      }
    }

    std::vector<Shape> shapes;
    shapes.reserve(nodes_.size());
    for (const auto& n : nodes_) shapes.push_back(n.value.shape());
    return Gradients(std::move(grads), std::move(shapes));
  }

 private:
  struct Node {
    OpKind op;
    std::array<NodeId, 2> inputs{};
    std::size_t arity = 0;
    Tensor value;
    bool requires_grad = false;
    double factor = 0.0;
  };

  NodeId push(OpKind op, std::array<NodeId, 2> inputs, std::size_t arity, Tensor value, bool requires_grad) {
    if (op != OpKind::leaf && !value.all_finite())
      throw NonFiniteError(std::string(op_name(op)) + " produced non-finite output");
    nodes_.push_back(Node{op, inputs, arity, std::move(value), requires_grad, 0.0});
    return nodes_.size() - 1;
  }

  NodeId unary(OpKind op, NodeId a, Tensor out) { return push(op, {a, 0}, 1, std::move(out), requires_grad(a)); }

  NodeId binary(OpKind op, NodeId a, NodeId b, Tensor out) {
    return push(op, {a, b}, 2, std::move(out), requires_grad(a) || requires_grad(b));
  }

  template <class F>
  void accumulate(std::vector<std::optional<Tensor>>& grads, NodeId target, F&& make) const {
    if (!nodes_[target].requires_grad) return;
    if (grads[target]) {
      ops::add_inplace(*grads[target], make());
    } else {
      grads[target] = make();
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace fgs
