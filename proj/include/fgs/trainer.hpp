#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fgs/data.hpp"
#include "fgs/model.hpp"

namespace fgs {

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 4;
  double lr = 0.05;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

using LossTrace = std::vector<double>;

// How a trainable payload plugs into a forward pass. Full fine-tuning trains
// a ModelParams directly; LoRA trains an adapter beside a frozen base.
template <class P>
struct Trainable;

template <>
struct Trainable<ModelParams> {
  static NodeId forward(Graph& g, const ModelParams& /*base*/, const ModelParams& p, NodeId x, std::size_t begin,
                        std::size_t end, ForwardBindings& bind) {
    return forward_layers(g, p, nullptr, x, begin, end, true, false, &bind);
  }

  // Aligned with ModelParams::for_each_tensor.
  static std::vector<NodeId> leaves(const ModelParams& p, const ForwardBindings& bind) {
    std::vector<NodeId> ids;
    for (const auto& l : p.layers) {
      ids.push_back(bind.weight.at(l.index));
      ids.push_back(bind.bias.at(l.index));
    }
    return ids;
  }
};

template <>
struct Trainable<LoraAdapter> {
  static NodeId forward(Graph& g, const ModelParams& base, const LoraAdapter& p, NodeId x, std::size_t begin,
                        std::size_t end, ForwardBindings& bind) {
    return forward_layers(g, base, &p, x, begin, end, false, true, &bind);
  }

  static std::vector<NodeId> leaves(const LoraAdapter& p, const ForwardBindings& bind) {
    std::vector<NodeId> ids;
    for (const auto& [idx, f] : p.targets) {
      ids.push_back(bind.lora_a.at(idx));
      ids.push_back(bind.lora_b.at(idx));
    }
    return ids;
  }
};

/// Per-tensor gradients in for_each_tensor order; nullopt marks a frozen tensor.
using ParamGrads = std::vector<std::optional<Tensor>>;

inline ParamGrads collect_grads(const Gradients& grads, const std::vector<NodeId>& leaves) {
  ParamGrads out;
  out.reserve(leaves.size());
  for (NodeId id : leaves) {
    if (const Tensor* g = grads.find(id)) {
      out.emplace_back(*g);
    } else {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

struct LossAndGrads {
  double loss = 0.0;
  ParamGrads grads;
};

/// MSE loss of the whole model on (x, y) and its gradient w.r.t. the payload.
template <class P>
LossAndGrads loss_and_grads(const ModelParams& base, const P& trainable, const Tensor& x, const Tensor& y) {
  Graph g;
  ForwardBindings bind;
  const NodeId out =
      Trainable<P>::forward(g, base, trainable, g.leaf(x), base.first_index(), base.end_index(), bind);
  const NodeId loss = g.mse(out, g.leaf(y));
  const Gradients grads = g.backward(loss);
  return {g.value(loss).item(), collect_grads(grads, Trainable<P>::leaves(trainable, bind))};
}

/// p <- p - lr * grad for every non-frozen tensor.
template <class P>
void sgd_step(P& p, const ParamGrads& grads, double lr) {
  std::size_t k = 0;
  p.for_each_tensor([&](Tensor& t) {
    if (const auto& g = grads.at(k++)) ops::axpy(t, -lr, *g);
  });
}

template <class P>
struct TrainResult {
  P trainable;
  LossTrace losses;
};

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size) { return (n + batch_size - 1) / batch_size; }

inline void validate(const TrainConfig& cfg) {
  if (cfg.epochs == 0) throw ConfigError("epochs must be positive");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("lr must be a finite non-negative number");
}

/// Mini-batch SGD over `shard`. Only `trainable` changes; batch order is
/// reshuffled every epoch from cfg.seed. For full fine-tuning `base` is only
/// used for its layer range.
template <class P>
TrainResult<P> local_train(const ModelParams& base, P trainable, const Dataset& shard, const TrainConfig& cfg) {
  validate(cfg);
  if (shard.size() == 0) throw TrainingError("local_train on an empty shard", 0, 0.0);
  Rng rng(cfg.seed);
  const std::size_t n = shard.size();
  std::vector<std::size_t> order(n);
  LossTrace losses;
  losses.reserve(cfg.epochs * steps_per_epoch(n, cfg.batch_size));
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t at = 0; at < n; at += cfg.batch_size, ++step) {
      const auto ids = std::span<const std::size_t>(order).subspan(at, std::min(cfg.batch_size, n - at));
      const Dataset batch = shard.rows(ids);
      LossAndGrads lg;
      try {
        lg = loss_and_grads(base, trainable, batch.features, batch.targets);
      } catch (const NonFiniteError& err) {
        throw TrainingError("non-finite value at step " + std::to_string(step) + ": " + err.what(), step, NAN);
      }
      if (!std::isfinite(lg.loss)) {
        throw TrainingError("non-finite loss at step " + std::to_string(step) + " (loss " + std::to_string(lg.loss) + ")",
                            step, lg.loss);
      }
      losses.push_back(lg.loss);
      sgd_step(trainable, lg.grads, cfg.lr);
    }
  }
  return {std::move(trainable), std::move(losses)};
}

/// Mean squared error over every sample and output.
inline double evaluate(const ModelParams& params, const LoraAdapter* adapter, const Dataset& data) {
  if (data.size() == 0) throw ShapeError("evaluate on an empty dataset");
  const Tensor pred = predict(params, adapter, data.features);
  if (pred.shape() != data.targets.shape()) throw ops::mismatch("evaluate", pred, data.targets);
  double total = 0.0;
  const std::size_t d = data.out_dim();
  for (std::size_t i = 0; i < data.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double r = pred.at(i, j) - data.targets.at(i, j);
      row += r * r;
    }
    total += row / static_cast<double>(d);
  }
  return total / static_cast<double>(data.size());
}

}  // namespace fgs
