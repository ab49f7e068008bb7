#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fgs/config.hpp"
#include "fgs/serialize.hpp"

namespace fgs {

/// Everything a run is trained on: the frozen pre-trained base, the data and
/// the simulated clients. Depends only on the [model], [clients], [data] and
/// [links] sections, so two configs with the same data seed share a world.
struct World {
  ModelParams base;
  ModelParams teacher;
  Dataset train;
  Dataset holdout;
  std::vector<ClientState> clients;
};

/// Teacher = base plus a random low-rank shift on the configured layers: the
/// "style" the clients fine-tune toward.
inline ModelParams make_teacher(const ModelParams& base, const std::set<std::size_t>& layers, std::size_t rank,
                                double scale, std::uint64_t seed) {
  ModelParams teacher = base;
  Rng rng(seed);
  for (auto& l : teacher.layers) {
    if (!layers.contains(l.index)) continue;
    const std::size_t r = std::min({rank, l.in_dim(), l.out_dim()});
    Tensor u({l.out_dim(), r}), v({r, l.in_dim()});
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = rng.normal(0.0, 1.0);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.normal(0.0, 1.0);
    ops::axpy(l.weight, scale / static_cast<double>(r), ops::matmul(u, v));
  }
  return teacher;
}

inline World build_world(const ExperimentConfig& cfg) {
  validate(cfg);
  World w;
  w.base = init_model(cfg.model, derive_seed(cfg.data_seed, 1));
  w.teacher = make_teacher(w.base, cfg.teacher_layers, cfg.teacher_rank, cfg.teacher_scale, derive_seed(cfg.data_seed, 2));
  const std::size_t n = total_samples(cfg);
  w.train = make_teacher_dataset(w.teacher, n, cfg.noise_sd, derive_seed(cfg.data_seed, 3));
  if (cfg.holdout > 0) w.holdout = make_teacher_dataset(w.teacher, cfg.holdout, cfg.noise_sd, derive_seed(cfg.data_seed, 6));
  const auto shards = partition(w.train, cfg.clients, cfg.partition, derive_seed(cfg.data_seed, 4));
  for (std::uint32_t i = 0; i < shards.size(); ++i) {
    ClientState c;
    c.id = i;
    c.shard = shards[i];
    c.link_up = {cfg.uplink_bps, cfg.latency_s, LinkKind::uplink};
    c.link_down = {cfg.downlink_bps, cfg.latency_s, LinkKind::downlink};
    for (std::uint32_t j = 0; j < shards.size(); ++j)
      if (j != i) c.d2d_links[j] = {cfg.d2d_bps, cfg.latency_s, LinkKind::d2d};
    w.clients.push_back(std::move(c));
  }
  return w;
}

inline ProtocolConfig protocol_config(const ExperimentConfig& cfg) {
  ProtocolConfig p;
  p.approach = cfg.approach;
  p.rounds = cfg.rounds;
  p.split_layer = cfg.split_layer;
  p.train_mode = cfg.mode;
  p.order = cfg.order;
  p.train = TrainConfig{cfg.epochs, cfg.batch_size, cfg.lr, cfg.seed};
  p.precision = cfg.precision;
  p.compute.seconds_per_param_sample = cfg.compute_s_per_param_sample;
  p.seed = cfg.seed;
  return p;
}

struct MetricsRow {
  std::size_t round = 0;
  double global_loss = 0.0;
  std::uint64_t cum_bytes = 0;
  double cum_seconds = 0.0;
};

struct RunResult {
  ExperimentConfig config;
  TrainingOutcome outcome;
  std::vector<MetricsRow> metrics;
  ParamCount counts;
};

inline std::vector<MetricsRow> metrics_from(const std::vector<RoundTrace>& traces) {
  std::vector<MetricsRow> rows;
  std::uint64_t bytes = 0;
  double seconds = 0.0;
  for (const auto& t : traces) {
    bytes += t.bytes;
    seconds += t.seconds;
    rows.push_back({t.round, t.global_loss, bytes, seconds});
  }
  return rows;
}

inline RunResult run_experiment(const ExperimentConfig& cfg) {
  const World w = build_world(cfg);
  std::optional<LoraAdapter> adapter;
  if (cfg.mode == TrainMode::lora) adapter = attach_lora(cfg.model, cfg.targets, cfg.rank, cfg.alpha, derive_seed(cfg.seed, 5));
  RunResult r;
  r.config = cfg;
  r.outcome = run_training(w.clients, w.base, adapter, protocol_config(cfg), cfg.holdout ? &w.holdout : nullptr);
  r.metrics = metrics_from(r.outcome.traces);
  r.counts = param_count(cfg.model, adapter ? &*adapter : nullptr);
  return r;
}

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "round,global_loss,cum_bytes,cum_seconds\n";
  for (const auto& r : rows)
    os << r.round << ',' << format_double(r.global_loss) << ',' << r.cum_bytes << ',' << format_double(r.cum_seconds) << '\n';
  return os.str();
}

// Train loss on the union of client shards and loss on the held-out set.
inline std::string eval_csv(const TrainingOutcome& o) {
  std::ostringstream os;
  os << "round,train_loss,holdout_loss\n";
  auto hold = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  os << 0 << ',' << format_double(o.initial_loss) << ',' << hold(o.initial_holdout_loss) << '\n';
  for (const auto& t : o.traces) os << t.round << ',' << format_double(t.global_loss) << ',' << hold(t.holdout_loss) << '\n';
  return os.str();
}

inline std::string ledger_csv(const CommLedger& ledger) {
  std::ostringstream os;
  ledger.write_csv(os);
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
}

/// metrics.csv, ledger.csv, eval.csv, model.fgs (w') and, in LoRA mode, adapter.fgs.
inline void write_outputs(const RunResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "metrics.csv", metrics_csv(r.metrics));
  write_text(dir / "ledger.csv", ledger_csv(r.outcome.ledger));
  write_text(dir / "eval.csv", eval_csv(r.outcome));
  const Dtype dt = r.config.precision == Precision::f16 ? Dtype::f16 : Dtype::f64;
  write_file((dir / "model.fgs").string(), encode_blob(to_entries(r.outcome.final_model), dt));
  if (r.outcome.adapter) write_file((dir / "adapter.fgs").string(), encode_blob(to_entries(*r.outcome.adapter), dt));
}

// ---------------------------------------------------------------------------
// Scheme comparison

/// Either an absolute loss or "p%" progress from the initial loss toward the
/// best loss both runs reach.
struct LossTarget {
  bool progress = false;
  double value = 0.0;

  static LossTarget parse(const std::string& text) {
    const std::string t = detail::trim(text);
    LossTarget out;
    std::string num = t;
    if (!t.empty() && t.back() == '%') {
      out.progress = true;
      num = t.substr(0, t.size() - 1);
    }
    char* end = nullptr;
    out.value = std::strtod(num.c_str(), &end);
    if (num.empty() || *end != '\0' || !std::isfinite(out.value)) throw ConfigError("bad loss target '" + text + "'");
    if (out.progress) {
      if (out.value < 0.0 || out.value > 100.0) throw ConfigError("progress target must lie in [0%, 100%]");
      out.value /= 100.0;
    }
    return out;
  }

  std::string label() const {
    return progress ? format_double(value * 100.0) + "%" : format_double(value);
  }
};

struct TargetHit {
  std::optional<std::size_t> round;  // nullopt: not reached
  std::uint64_t cum_bytes = 0;
  double cum_seconds = 0.0;
};

struct CompareRow {
  LossTarget target;
  double loss = 0.0;
  TargetHit a, b;
  std::optional<double> bytes_ratio;    // a / b
  std::optional<double> seconds_ratio;  // a / b
};

struct CompareReport {
  std::vector<CompareRow> rows;
};

inline double best_loss(const RunResult& r) {
  double best = r.outcome.initial_loss;
  for (const auto& m : r.metrics) best = std::min(best, m.global_loss);
  return best;
}

inline TargetHit first_hit(const RunResult& r, double loss) {
  if (r.outcome.initial_loss <= loss) return {0, 0, 0.0};
  for (const auto& m : r.metrics)
    if (m.global_loss <= loss) return {m.round, m.cum_bytes, m.cum_seconds};
  return {};
}

inline std::optional<double> ratio(const TargetHit& a, const TargetHit& b, auto field) {
  if (!a.round || !b.round) return std::nullopt;
  const double x = static_cast<double>(a.*field), y = static_cast<double>(b.*field);
  if (x == y) return 1.0;
  if (y == 0.0) return std::nullopt;
  return x / y;
}

inline CompareReport compare(const RunResult& a, const RunResult& b, const std::vector<LossTarget>& targets) {
  const double start = std::max(a.outcome.initial_loss, b.outcome.initial_loss);
  const double floor = std::max(best_loss(a), best_loss(b));
  CompareReport rep;
  for (const auto& t : targets) {
    CompareRow row;
    row.target = t;
    // Clamped so that 100% is exactly the floor despite rounding.
    row.loss = t.progress ? std::max(floor, start - t.value * (start - floor)) : t.value;
    row.a = first_hit(a, row.loss);
    row.b = first_hit(b, row.loss);
    row.bytes_ratio = ratio(row.a, row.b, &TargetHit::cum_bytes);
    row.seconds_ratio = ratio(row.a, row.b, &TargetHit::cum_seconds);
    rep.rows.push_back(row);
  }
  return rep;
}

inline std::string approach_name(Approach a) {
  return a == Approach::parallel ? "parallel" : a == Approach::split ? "split" : "sequential";
}

inline nlohmann::json run_summary(const RunResult& r, const std::string& source) {
  const auto& m = r.metrics;
  return {{"config", source},
          {"approach", approach_name(r.config.approach)},
          {"mode", r.config.mode == TrainMode::full ? "full" : "lora"},
          {"transferred_params", r.config.mode == TrainMode::full ? r.counts.full_params : r.counts.adapter_params},
          {"initial_loss", r.outcome.initial_loss},
          {"best_loss", best_loss(r)},
          {"final_loss", m.empty() ? r.outcome.initial_loss : m.back().global_loss},
          {"total_bytes", m.empty() ? 0 : m.back().cum_bytes},
          {"total_seconds", m.empty() ? 0.0 : m.back().cum_seconds}};
}

/// Report schema:
///   { "a": summary, "b": summary,
///     "targets": [ { "target", "loss",
///                    "a": {"reached", "round", "cum_bytes", "cum_seconds"},
///                    "b": {...}, "bytes_ratio", "seconds_ratio" } ] }
/// Unreached targets have "reached": false and null round/ratios.
inline nlohmann::json report_json(const RunResult& a, const std::string& src_a, const RunResult& b,
                                  const std::string& src_b, const CompareReport& rep) {
  auto hit = [](const TargetHit& h) {
    nlohmann::json j{{"reached", h.round.has_value()}};
    if (h.round) {
      j["round"] = *h.round;
      j["cum_bytes"] = h.cum_bytes;
      j["cum_seconds"] = h.cum_seconds;
    } else {
      j["round"] = nullptr;
      j["cum_bytes"] = nullptr;
      j["cum_seconds"] = nullptr;
    }
    return j;
  };
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& row : rep.rows) {
    targets.push_back({{"target", row.target.label()},
                       {"loss", row.loss},
                       {"a", hit(row.a)},
                       {"b", hit(row.b)},
                       {"bytes_ratio", opt(row.bytes_ratio)},
                       {"seconds_ratio", opt(row.seconds_ratio)}});
  }
  return {{"a", run_summary(a, src_a)}, {"b", run_summary(b, src_b)}, {"targets", targets}};
}

}  // namespace fgs
