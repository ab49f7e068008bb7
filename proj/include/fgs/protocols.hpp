#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fgs/comm.hpp"
#include "fgs/fedavg.hpp"
#include "fgs/trainer.hpp"

namespace fgs {

struct ClientState {
  std::uint32_t id = 0;
  Dataset shard;
  LinkModel link_up{2.5e6, 0.01, LinkKind::uplink};
  LinkModel link_down{12.5e6, 0.01, LinkKind::downlink};
  std::map<std::uint32_t, LinkModel> d2d_links;  // peer id -> link

  const LinkModel& d2d_to(std::uint32_t peer) const {
    auto it = d2d_links.find(peer);
    if (it == d2d_links.end())
      throw ConfigError("client " + std::to_string(id) + " has no D2D link to client " + std::to_string(peer));
    return it->second;
  }
};

enum class Approach { parallel, split, sequential };
enum class TrainMode { full, lora };
enum class OrderPolicy { random, fixed_cycle };

struct ProtocolConfig {
  Approach approach = Approach::sequential;
  std::size_t rounds = 100;
  std::optional<std::size_t> split_layer;
  TrainMode train_mode = TrainMode::lora;
  OrderPolicy order = OrderPolicy::random;
  TrainConfig train;
  Precision precision = Precision::f16;
  ComputeModel compute;
  std::uint64_t seed = 0;
};

struct RoundTrace {
  std::size_t round = 0;
  double global_loss = 0.0;
  std::optional<double> holdout_loss;
  std::uint64_t bytes = 0;
  double seconds = 0.0;
  std::vector<std::uint32_t> visit_order;  // sequential only

  friend bool operator==(const RoundTrace&, const RoundTrace&) = default;
};

inline void validate_clients(std::span<const ClientState> clients) {
  if (clients.empty()) throw ConfigError("at least one client is required");
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (clients[i].id != i) throw ConfigError("client ids must be dense 0..N-1 in order");
    if (clients[i].shard.size() == 0) throw ConfigError("client " + std::to_string(i) + " has an empty shard");
  }
}

template <class P>
std::size_t payload_params(const P& p) {
  std::size_t n = 0;
  p.for_each_tensor([&](const Tensor& t) { n += t.size(); });
  return n;
}

inline ModelParams join(const ModelParams& a, const ModelParams& b) {
  ModelParams out = a;
  out.layers.insert(out.layers.end(), b.layers.begin(), b.layers.end());
  return out;
}

inline LoraAdapter join(const LoraAdapter& a, const LoraAdapter& b) {
  LoraAdapter out = a;
  for (const auto& [idx, f] : b.targets) out.targets.insert_or_assign(idx, f);
  return out;
}

namespace detail {

inline TrainConfig client_train_config(const ProtocolConfig& cfg, std::size_t round, std::uint32_t client) {
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, round, client + 1);
  return tc;
}

template <class F>
auto tag_client(std::uint32_t client, F&& f) {
  try {
    return f();
  } catch (const TrainingError& e) {
    throw TrainingError("client " + std::to_string(client) + ": " + e.what(), e.step(), e.loss());
  }
}

}  // namespace detail

template <class P>
struct RoundResult {
  P model;
  RoundTrace trace;
};

/// Broadcast, local training on every client, upload, FedAvg.
template <class P>
RoundResult<P> run_parallel_round(std::span<const ClientState> clients, const ModelParams& base, const P& global,
                                  const ProtocolConfig& cfg, std::size_t round, CommLedger& ledger) {
  validate_clients(clients);
  const std::uint64_t size = bytes_of(payload_params(global), cfg.precision);
  std::vector<ClientUpdate<P>> updates;
  std::vector<double> client_time(clients.size(), 0.0);
  for (const auto& c : clients) {
    const double t = transfer_time(size, c.link_down);
    ledger.record({round, Endpoint::server(), Endpoint::client(c.id), PayloadKind::model_down, size, t});
    client_time[c.id] += t;
  }
  for (const auto& c : clients) {
    auto result = detail::tag_client(c.id, [&] {
      return local_train(base, global, c.shard, detail::client_train_config(cfg, round, c.id));
    });
    client_time[c.id] += cfg.compute.seconds(payload_params(global), c.shard.size() * cfg.train.epochs);
    updates.push_back({c.id, std::move(result.trainable), c.shard.size()});
  }
  for (const auto& c : clients) {
    const double t = transfer_time(size, c.link_up);
    ledger.record({round, Endpoint::client(c.id), Endpoint::server(), PayloadKind::model_up, size, t});
    client_time[c.id] += t;
  }
  RoundTrace trace;
  trace.round = round;
  trace.bytes = ledger.round_totals(round).bytes;
  // Clients run concurrently on private links.
  trace.seconds = *std::max_element(client_time.begin(), client_time.end());
  return {fedavg(updates), std::move(trace)};
}

/// Gradients of one split-learning exchange.
struct SplitStep {
  double loss = 0.0;
  Tensor smash;     // client-side output D sent to the server
  Tensor cut_grad;  // dLoss/dD returned to the client
  ParamGrads client_grads;
  ParamGrads server_grads;
};

/// Client forward to the cut, server forward + loss + backward, then client
/// backward from the returned cut-layer gradient. Client and server use
/// separate graphs; only D, the labels and dL/dD cross the boundary.
template <class P>
SplitStep split_step(const ModelParams& base, const P& client_side, const P& server_side, std::size_t cut,
                     const Tensor& x, const Tensor& y) {
  const std::size_t layers = base.end_index();
  if (cut < 1 || cut >= layers) throw ConfigError("split_layer must lie in [1, " + std::to_string(layers - 1) + "]");
  SplitStep out;

  Graph client;
  ForwardBindings cbind;
  const NodeId d = Trainable<P>::forward(client, base, client_side, client.leaf(x), 0, cut, cbind);
  out.smash = client.value(d);

  Graph server;
  ForwardBindings sbind;
  const NodeId d_in = server.leaf(out.smash, true);
  const NodeId pred = Trainable<P>::forward(server, base, server_side, d_in, cut, layers, sbind);
  const NodeId loss = server.mse(pred, server.leaf(y));
  out.loss = server.value(loss).item();
  const Gradients sg = server.backward(loss);
  out.server_grads = collect_grads(sg, Trainable<P>::leaves(server_side, sbind));
  out.cut_grad = sg.get(d_in);

  const Gradients cg = client.backward_from(d, out.cut_grad);
  out.client_grads = collect_grads(cg, Trainable<P>::leaves(client_side, cbind));
  return out;
}

template <class P>
struct SplitRoundResult {
  P client_side;
  P server_side;
  RoundTrace trace;
};

/// Split learning, clients served one at a time in id order against a single
/// server-side model; client-side models are FedAvg'd at the end of the round.
template <class P>
SplitRoundResult<P> run_split_round(std::span<const ClientState> clients, const ModelParams& base, const P& client_side,
                                    const P& server_side, const ProtocolConfig& cfg, std::size_t round,
                                    CommLedger& ledger) {
  validate_clients(clients);
  if (!cfg.split_layer) throw ConfigError("split approach requires split_layer");
  const std::size_t cut = *cfg.split_layer;
  const std::size_t layers = base.end_index();
  if (cut < 1 || cut >= layers) throw ConfigError("split_layer must lie in [1, " + std::to_string(layers - 1) + "]");
  const std::size_t cut_width = base.find(cut)->in_dim();
  const std::size_t out_width = base.layers.back().out_dim();
  const std::uint64_t bpp = bytes_per_param(cfg.precision);
  const std::uint64_t model_bytes = bytes_of(payload_params(client_side), cfg.precision);
  const std::size_t client_params = payload_params(client_side);
  const std::size_t server_params = payload_params(server_side);

  P server = server_side;
  std::vector<ClientUpdate<P>> updates;
  double max_down = 0.0, max_up = 0.0, serial = 0.0;

  for (const auto& c : clients) {
    const double t = transfer_time(model_bytes, c.link_down);
    ledger.record({round, Endpoint::server(), Endpoint::client(c.id), PayloadKind::model_down, model_bytes, t});
    max_down = std::max(max_down, t);
  }
  for (const auto& c : clients) {
    const TrainConfig tc = detail::client_train_config(cfg, round, c.id);
    validate(tc);
    P local = client_side;
    Rng rng(tc.seed);
    const std::size_t n = c.shard.size();
    std::vector<std::size_t> order(n);
    std::size_t step = 0;
    for (std::size_t e = 0; e < tc.epochs; ++e) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(order));
      for (std::size_t at = 0; at < n; at += tc.batch_size, ++step) {
        const auto ids = std::span<const std::size_t>(order).subspan(at, std::min(tc.batch_size, n - at));
        const Dataset batch = c.shard.rows(ids);
        const std::size_t rows = batch.size();
        const SplitStep s = detail::tag_client(c.id, [&] {
          try {
            return split_step(base, local, server, cut, batch.features, batch.targets);
          } catch (const NonFiniteError& err) {
            throw TrainingError("non-finite value at step " + std::to_string(step) + ": " + err.what(), step, NAN);
          }
        });
        if (!std::isfinite(s.loss))
          throw TrainingError("client " + std::to_string(c.id) + ": non-finite loss at step " + std::to_string(step), step, s.loss);

        const std::uint64_t smash_bytes = rows * cut_width * bpp;
        const std::uint64_t label_bytes = rows * out_width * bpp;
        const double t_smash = transfer_time(smash_bytes, c.link_up);
        const double t_label = transfer_time(label_bytes, c.link_up);
        const double t_grad = transfer_time(smash_bytes, c.link_down);
        ledger.record({round, Endpoint::client(c.id), Endpoint::server(), PayloadKind::smash_up, smash_bytes, t_smash});
        ledger.record({round, Endpoint::client(c.id), Endpoint::server(), PayloadKind::labels_up, label_bytes, t_label});
        ledger.record({round, Endpoint::server(), Endpoint::client(c.id), PayloadKind::cut_grad_down, smash_bytes, t_grad});
        serial += t_smash + t_label + t_grad + cfg.compute.seconds(client_params, rows) +
                  cfg.compute.seconds(server_params, rows);

        sgd_step(server, s.server_grads, tc.lr);
        sgd_step(local, s.client_grads, tc.lr);
      }
    }
    updates.push_back({c.id, std::move(local), n});
  }
  for (const auto& c : clients) {
    const double t = transfer_time(model_bytes, c.link_up);
    ledger.record({round, Endpoint::client(c.id), Endpoint::server(), PayloadKind::model_up, model_bytes, t});
    max_up = std::max(max_up, t);
  }

  RoundTrace trace;
  trace.round = round;
  trace.bytes = ledger.round_totals(round).bytes;
  trace.seconds = max_down + serial + max_up;
  return {fedavg(updates), std::move(server), std::move(trace)};
}

/// Chooses the next relay node among the not-yet-visited clients.
using RelayPolicy = std::function<std::uint32_t(std::span<const std::uint32_t> remaining, Rng& rng)>;

inline std::uint32_t uniform_relay(std::span<const std::uint32_t> remaining, Rng& rng) {
  return remaining[rng.uniform_index(remaining.size())];
}

// Always the lowest remaining id, i.e. the fixed cycle 0, 1, ..., N-1.
inline std::uint32_t cycle_relay(std::span<const std::uint32_t> remaining, Rng&) {
  return *std::min_element(remaining.begin(), remaining.end());
}

inline RelayPolicy relay_policy(OrderPolicy p) { return p == OrderPolicy::random ? RelayPolicy(uniform_relay) : RelayPolicy(cycle_relay); }

/// D2D relay: the server hands v_t to a first client; each client trains and
/// passes the model to an unvisited peer; the last client uploads to the server.
template <class P>
RoundResult<P> run_sequential_round(std::span<const ClientState> clients, const ModelParams& base, const P& v_t,
                                    const ProtocolConfig& cfg, Rng& rng, std::size_t round, CommLedger& ledger,
                                    const RelayPolicy& policy = uniform_relay) {
  validate_clients(clients);
  const std::uint64_t size = bytes_of(payload_params(v_t), cfg.precision);
  std::vector<std::uint32_t> remaining(clients.size());
  std::iota(remaining.begin(), remaining.end(), std::uint32_t{0});

  RoundTrace trace;
  trace.round = round;
  P model = v_t;
  double seconds = 0.0;

  std::uint32_t current = policy(remaining, rng);
  {
    const double t = transfer_time(size, clients[current].link_down);
    ledger.record({round, Endpoint::server(), Endpoint::client(current), PayloadKind::model_down, size, t});
    seconds += t;
  }
  while (true) {
    const ClientState& c = clients[current];
    auto result = detail::tag_client(c.id, [&] {
      return local_train(base, std::move(model), c.shard, detail::client_train_config(cfg, round, c.id));
    });
    model = std::move(result.trainable);
    seconds += cfg.compute.seconds(payload_params(model), c.shard.size() * cfg.train.epochs);
    trace.visit_order.push_back(current);
    remaining.erase(std::find(remaining.begin(), remaining.end(), current));
    if (remaining.empty()) {
      const double t = transfer_time(size, c.link_up);
      ledger.record({round, Endpoint::client(current), Endpoint::server(), PayloadKind::model_up, size, t});
      seconds += t;
      break;
    }
    const std::uint32_t next = policy(remaining, rng);
    const double t = transfer_time(size, c.d2d_to(next));
    ledger.record({round, Endpoint::client(current), Endpoint::client(next), PayloadKind::model_relay, size, t});
    seconds += t;
    current = next;
  }
  trace.bytes = ledger.round_totals(round).bytes;
  trace.seconds = seconds;
  return {std::move(model), std::move(trace)};
}

struct TrainingOutcome {
  ModelParams final_model;               // w' (merged in LoRA mode)
  std::optional<LoraAdapter> adapter;    // v_T in LoRA mode
  double initial_loss = 0.0;
  std::optional<double> initial_holdout_loss;
  std::vector<RoundTrace> traces;
  CommLedger ledger;
};

inline void validate(const ProtocolConfig& cfg, const ModelParams& base) {
  validate(cfg.train);
  if (cfg.approach == Approach::split) {
    if (!cfg.split_layer) throw ConfigError("split approach requires split_layer");
    if (*cfg.split_layer < 1 || *cfg.split_layer >= base.layers.size())
      throw ConfigError("split_layer must lie in [1, " + std::to_string(base.layers.size() - 1) + "]");
  } else if (cfg.split_layer) {
    throw ConfigError("split_layer is only valid with the split approach");
  }
}

namespace detail {

template <class P>
double global_loss(const ModelParams& base, const P& payload, const Dataset& data) {
  if constexpr (std::is_same_v<P, LoraAdapter>) {
    return evaluate(base, &payload, data);
  } else {
    return evaluate(payload, nullptr, data);
  }
}

template <class P>
TrainingOutcome run_rounds(std::span<const ClientState> clients, const ModelParams& base, P payload,
                           const ProtocolConfig& cfg, const Dataset* holdout) {
  std::vector<Dataset> shards;
  for (const auto& c : clients) shards.push_back(c.shard);
  const Dataset train_union = concat(shards);

  TrainingOutcome out;
  out.initial_loss = global_loss(base, payload, train_union);
  if (holdout) out.initial_holdout_loss = global_loss(base, payload, *holdout);

  Rng order_rng(derive_seed(cfg.seed, 0x5e9));
  const RelayPolicy policy = relay_policy(cfg.order);
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    RoundTrace trace;
    switch (cfg.approach) {
      case Approach::parallel: {
        auto r = run_parallel_round(clients, base, payload, cfg, t, out.ledger);
        payload = std::move(r.model);
        trace = std::move(r.trace);
        break;
      }
      case Approach::sequential: {
        auto r = run_sequential_round(clients, base, payload, cfg, order_rng, t, out.ledger, policy);
        payload = std::move(r.model);
        trace = std::move(r.trace);
        break;
      }
      case Approach::split: {
        const std::size_t cut = *cfg.split_layer;
        const std::size_t end = base.end_index();
        auto r = run_split_round(clients, base, payload.slice(0, cut), payload.slice(cut, end), cfg, t, out.ledger);
        payload = join(r.client_side, r.server_side);
        trace = std::move(r.trace);
        break;
      }
    }
    trace.global_loss = global_loss(base, payload, train_union);
    if (holdout) trace.holdout_loss = global_loss(base, payload, *holdout);
    out.traces.push_back(std::move(trace));
  }

  if constexpr (std::is_same_v<P, LoraAdapter>) {
    out.final_model = merge(base, payload);
    out.adapter = std::move(payload);
  } else {
    out.final_model = std::move(payload);
  }
  return out;
}

}  // namespace detail

/// Runs cfg.rounds global rounds. In LoRA mode `adapter` is the initial v_0
/// and the base stays frozen; in full mode every base layer is trained.
inline TrainingOutcome run_training(std::span<const ClientState> clients, const ModelParams& base,
                                    const std::optional<LoraAdapter>& adapter, const ProtocolConfig& cfg,
                                    const Dataset* holdout = nullptr) {
  validate_clients(clients);
  validate(cfg, base);
  if (cfg.train_mode == TrainMode::lora) {
    if (!adapter) throw ConfigError("lora mode requires an adapter");
    return detail::run_rounds(clients, base, *adapter, cfg, holdout);
  }
  ModelParams full = base;
  full.set_trainable(true);
  return detail::run_rounds(clients, base, std::move(full), cfg, holdout);
}

}  // namespace fgs
