#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fgs/graph.hpp"
#include "fgs/rng.hpp"

namespace fgs {

enum class Activation { tanh, none };

/// MLP architecture: layer_dims[0] is the input width, layer_dims.back() the
/// output width. Hidden layers use tanh, the final layer is linear.
struct ModelSpec {
  std::vector<std::size_t> layer_dims;

  std::size_t num_layers() const { return layer_dims.empty() ? 0 : layer_dims.size() - 1; }
  std::size_t in_dim(std::size_t layer) const { return layer_dims.at(layer); }
  std::size_t out_dim(std::size_t layer) const { return layer_dims.at(layer + 1); }
  Activation activation(std::size_t layer) const {
    return layer + 1 == num_layers() ? Activation::none : Activation::tanh;
  }

  void validate() const {
    if (layer_dims.size() < 2) throw ConfigError("layer_dims needs at least two entries");
    for (auto d : layer_dims)
      if (d == 0) throw ConfigError("layer_dims entries must be positive");
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline std::string layer_name(std::size_t index) { return "fc" + std::to_string(index); }

struct Layer {
  std::size_t index = 0;
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
  Activation activation = Activation::tanh;
  bool trainable = true;

  std::string name() const { return layer_name(index); }
  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

/// A contiguous run of layers. A whole model holds layers 0..L-1; the two
/// halves of a split model hold [0, cut) and [cut, L).
struct ModelParams {
  std::vector<Layer> layers;

  const Layer* find(std::size_t index) const {
    for (const auto& l : layers)
      if (l.index == index) return &l;
    return nullptr;
  }

  const Layer* find(const std::string& name) const {
    for (const auto& l : layers)
      if (l.name() == name) return &l;
    return nullptr;
  }

  std::size_t first_index() const { return layers.empty() ? 0 : layers.front().index; }
  std::size_t end_index() const { return layers.empty() ? 0 : layers.back().index + 1; }

  ModelParams slice(std::size_t begin, std::size_t end) const {
    ModelParams out;
    for (const auto& l : layers)
      if (l.index >= begin && l.index < end) out.layers.push_back(l);
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  void set_trainable(bool on) {
    for (auto& l : layers) l.trainable = on;
  }

  template <class F>
  void for_each_tensor(F&& f) {
    for (auto& l : layers) {
      f(l.weight);
      f(l.bias);
    }
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    for (const auto& l : layers) {
      f(l.weight);
      f(l.bias);
    }
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const auto& x = a.layers[i];
      const auto& y = b.layers[i];
      if (x.index != y.index || !(x.weight == y.weight) || !(x.bias == y.bias) || x.activation != y.activation)
        return false;
    }
    return true;
  }
};

/// Glorot-uniform weights, zero biases; every layer trainable.
inline ModelParams init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ModelParams params;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t in = spec.in_dim(l), out = spec.out_dim(l);
    const double s = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w({out, in});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-s, s);
    params.layers.push_back(Layer{l, std::move(w), Tensor({out}), spec.activation(l), true});
  }
  return params;
}

struct LoraFactors {
  Tensor a;  // [r, in]
  Tensor b;  // [out, r]
};

/// Low-rank bypass: for each target layer the effective weight delta is
/// (alpha / rank) * B * A.
struct LoraAdapter {
  std::map<std::size_t, LoraFactors> targets;  // keyed by layer index
  std::size_t rank = 8;
  double alpha = 8.0;

  double scale() const { return alpha / static_cast<double>(rank); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& [idx, f] : targets) n += f.a.size() + f.b.size();
    return n;
  }

  LoraAdapter slice(std::size_t begin, std::size_t end) const {
    LoraAdapter out;
    out.rank = rank;
    out.alpha = alpha;
    for (const auto& [idx, f] : targets)
      if (idx >= begin && idx < end) out.targets.emplace(idx, f);
    return out;
  }

  template <class F>
  void for_each_tensor(F&& f) {
    for (auto& [idx, t] : targets) {
      f(t.a);
      f(t.b);
    }
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    for (const auto& [idx, t] : targets) {
      f(t.a);
      f(t.b);
    }
  }

  friend bool operator==(const LoraAdapter& x, const LoraAdapter& y) {
    if (x.rank != y.rank || x.alpha != y.alpha || x.targets.size() != y.targets.size()) return false;
    for (auto i = x.targets.begin(), j = y.targets.begin(); i != x.targets.end(); ++i, ++j) {
      if (i->first != j->first || !(i->second.a == j->second.a) || !(i->second.b == j->second.b)) return false;
    }
    return true;
  }
};

/// A = N(0, 0.02) entries, B = 0, so the initial delta is exactly zero.
inline LoraAdapter attach_lora(const ModelSpec& spec, const std::set<std::size_t>& target_layers, std::size_t rank,
                               double alpha, std::uint64_t seed) {
  spec.validate();
  if (rank == 0) throw ConfigError("rank must be at least 1");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  LoraAdapter adapter;
  adapter.rank = rank;
  adapter.alpha = alpha;
  Rng rng(seed);
  for (std::size_t l : target_layers) {
    if (l >= spec.num_layers()) throw ConfigError("lora target layer " + std::to_string(l) + " does not exist");
    const std::size_t in = spec.in_dim(l), out = spec.out_dim(l);
    // A rank above min(in, out) is not low rank, but it is still a valid
    // factorization; only a rank beyond both sides is refused.
    if (rank > std::max(in, out)) {
      throw ConfigError("rank " + std::to_string(rank) + " exceeds both dimensions of " + layer_name(l) + " (" +
                        std::to_string(out) + "x" + std::to_string(in) + ")");
    }
    Tensor a({rank, in});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.normal(0.0, 0.02);
    adapter.targets.emplace(l, LoraFactors{std::move(a), Tensor({out, rank})});
  }
  return adapter;
}

/// Folds the bypass into the base: W' = W + (alpha/r) * B * A per target.
inline ModelParams merge(const ModelParams& base, const LoraAdapter& adapter) {
  ModelParams out = base;
  for (const auto& [idx, f] : adapter.targets) {
    auto it = std::find_if(out.layers.begin(), out.layers.end(), [&](const Layer& l) { return l.index == idx; });
    if (it == out.layers.end()) throw ShapeError("adapter targets missing layer " + layer_name(idx));
    Tensor delta = ops::matmul(f.b, f.a);
    if (delta.shape() != it->weight.shape()) throw ops::mismatch("merge", it->weight, delta);
    ops::axpy(it->weight, adapter.scale(), delta);
  }
  return out;
}

struct ParamCount {
  std::size_t full_params = 0;
  std::size_t adapter_params = 0;
};

inline ParamCount param_count(const ModelSpec& spec, const LoraAdapter* adapter = nullptr) {
  spec.validate();
  ParamCount c;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) c.full_params += spec.in_dim(l) * spec.out_dim(l) + spec.out_dim(l);
  if (adapter) {
    for (const auto& [idx, f] : adapter->targets) c.adapter_params += adapter->rank * (spec.in_dim(idx) + spec.out_dim(idx));
  }
  return c;
}

/// Leaf node ids created by a forward pass, per layer index.
struct ForwardBindings {
  std::map<std::size_t, NodeId> weight, bias, lora_a, lora_b;
};

/// Runs layers [begin, end) on input node `x`. Base weights come from
/// `params` (which must contain those layers); a non-null adapter adds its
/// bypass on targeted layers. Base leaves require a gradient only when the
/// layer is trainable and `train_base` is set; adapter leaves when
/// `train_adapter` is set.
inline NodeId forward_layers(Graph& g, const ModelParams& params, const LoraAdapter* adapter, NodeId x,
                             std::size_t begin, std::size_t end, bool train_base, bool train_adapter,
                             ForwardBindings* bind = nullptr) {
  NodeId h = x;
  for (std::size_t idx = begin; idx < end; ++idx) {
    const Layer* layer = params.find(idx);
    if (!layer) throw ShapeError("model params missing layer " + layer_name(idx));
    const NodeId w = g.leaf(layer->weight, train_base && layer->trainable);
    const NodeId b = g.leaf(layer->bias, train_base && layer->trainable);
    NodeId y = g.add_bias(g.matmul_nt(h, w), b);
    if (adapter) {
      if (auto it = adapter->targets.find(idx); it != adapter->targets.end()) {
        const NodeId a = g.leaf(it->second.a, train_adapter);
        const NodeId bb = g.leaf(it->second.b, train_adapter);
        const NodeId bypass = g.scale(g.matmul_nt(g.matmul_nt(h, a), bb), adapter->scale());
        y = g.add(y, bypass);
        if (bind) {
          bind->lora_a[idx] = a;
          bind->lora_b[idx] = bb;
        }
      }
    }
    if (layer->activation == Activation::tanh) y = g.tanh(y);
    if (bind) {
      bind->weight[idx] = w;
      bind->bias[idx] = b;
    }
    h = y;
  }
  return h;
}

inline Tensor predict(const ModelParams& params, const LoraAdapter* adapter, const Tensor& x) {
  Graph g;
  const NodeId out = forward_layers(g, params, adapter, g.leaf(x), params.first_index(), params.end_index(), false, false);
  return g.value(out);
}

}  // namespace fgs
