#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "fgs/graph.hpp"

namespace fgs {

/// Builds a scalar loss on `g` from leaves holding the given parameters.
using LossBuilder = std::function<NodeId(Graph& g, std::span<const NodeId> params)>;

namespace detail {

inline double eval_loss(const LossBuilder& f, std::span<const Tensor> params, bool track, std::vector<NodeId>* ids,
                        Graph* out, NodeId* loss_id = nullptr) {
  Graph g;
  std::vector<NodeId> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(g.leaf(p, track));
  const NodeId loss = f(g, leaves);
  const double v = g.value(loss).item();
  if (ids) *ids = leaves;
  if (loss_id) *loss_id = loss;
  if (out) *out = std::move(g);
  return v;
}

}  // namespace detail

/// Compares backward() against central differences on every coordinate of
/// every tensor in `params`. Returns the largest relative error, with the
/// denominator max(|analytic|, |numeric|, 1e-8).
inline double finite_diff_check(const LossBuilder& f, std::span<const Tensor> params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw Error("finite_diff_check: eps must lie in (0, 1e-2]");

  Graph g;
  std::vector<NodeId> ids;
  NodeId loss = 0;
  detail::eval_loss(f, params, true, &ids, &g, &loss);
  const Gradients grads = g.backward(loss);

  std::vector<Tensor> work(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t t = 0; t < work.size(); ++t) {
    const Tensor analytic = grads.get(ids[t]);
    for (std::size_t i = 0; i < work[t].size(); ++i) {
      const double saved = work[t][i];
      work[t][i] = saved + eps;
      const double up = detail::eval_loss(f, work, false, nullptr, nullptr);
      work[t][i] = saved - eps;
      const double down = detail::eval_loss(f, work, false, nullptr, nullptr);
      work[t][i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

inline double finite_diff_check(const LossBuilder& f, const Tensor& param, double eps) {
  return finite_diff_check(f, std::span<const Tensor>(&param, 1), eps);
}

}  // namespace fgs
