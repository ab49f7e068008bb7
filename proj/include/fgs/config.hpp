#pragma once

#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fgs/protocols.hpp"

// Experiment configuration in an INI dialect:
//
//   # comment            ; comment
//   [section]
//   key = value
//
// Keys may appear at most once. Lists are comma separated. Every key has a
// default, so an empty file is the five-client case-study configuration.
namespace fgs {

struct ExperimentConfig {
  // [model]
  ModelSpec model{{8, 8, 149, 149, 4}};
  // [finetune]
  TrainMode mode = TrainMode::lora;
  std::size_t rank = 8;
  double alpha = 16.0;
  std::set<std::size_t> targets{0};
  // [protocol]
  Approach approach = Approach::sequential;
  std::optional<std::size_t> split_layer;
  std::size_t rounds = 100;
  OrderPolicy order = OrderPolicy::random;
  // [clients]
  std::size_t clients = 5;
  std::size_t samples_per_client = 4;
  PartitionScheme partition;
  // [data]
  std::uint64_t data_seed = 0;
  double noise_sd = 0.2;
  std::size_t teacher_rank = 8;
  double teacher_scale = 2.0;
  std::set<std::size_t> teacher_layers{0};
  std::size_t holdout = 20;
  // [trainer]
  std::size_t epochs = 1;
  std::size_t batch_size = 4;
  double lr = 2.0;
  // [links]
  double downlink_bps = 12.5e6;  // 100 Mb/s
  double uplink_bps = 2.5e6;     // 20 Mb/s
  double d2d_bps = 6.25e6;       // 50 Mb/s
  double latency_s = 0.01;
  double compute_s_per_param_sample = 1e-8;
  // [sizing]
  Precision precision = Precision::f16;
  // [run]
  std::uint64_t seed = 0;
  std::string output = "fgs_out";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

class ConfigReader {
 public:
  ConfigReader(std::size_t line, std::string key, std::string value)
      : line_(line), key_(std::move(key)), value_(std::move(value)) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("line " + std::to_string(line_) + ": " + key_ + ": " + msg);
  }

  std::uint64_t u64() const {
    const std::string& v = value_;
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) fail("expected a non-negative integer, got '" + v + "'");
    errno = 0;
    const unsigned long long x = std::strtoull(v.c_str(), nullptr, 10);
    if (errno == ERANGE) fail("integer out of range");
    return x;
  }

  std::size_t size() const { return static_cast<std::size_t>(u64()); }

  double real() const {
    char* end = nullptr;
    errno = 0;
    const double x = std::strtod(value_.c_str(), &end);
    if (value_.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(x)) fail("expected a number, got '" + value_ + "'");
    return x;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(value_)) out.push_back(ConfigReader(line_, key_, item).size());
    return out;
  }

  template <class E>
  E choice(std::initializer_list<std::pair<const char*, E>> options) const {
    std::string names;
    for (const auto& [name, e] : options) {
      if (value_ == name) return e;
      names += names.empty() ? name : std::string(", ") + name;
    }
    fail("expected one of {" + names + "}, got '" + value_ + "'");
  }

  const std::string& str() const { return value_; }

 private:
  std::size_t line_;
  std::string key_;
  std::string value_;
};

inline std::string join_sizes(const auto& xs) {
  std::string s;
  for (auto x : xs) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}

}  // namespace detail

/// Checks cross-field constraints. Messages name the offending key.
inline void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& key, const std::string& msg) { throw ConfigError(key + ": " + msg); };
  try {
    c.model.validate();
  } catch (const ConfigError& e) {
    fail("layer_dims", e.what());
  }
  const std::size_t layers = c.model.num_layers();
  if (c.rank == 0) fail("rank", "must be at least 1");
  if (!(c.alpha > 0.0)) fail("alpha", "must be positive");
  // Adapter shape only matters when an adapter is built.
  for (auto t : c.mode == TrainMode::lora ? c.targets : std::set<std::size_t>{}) {
    if (t >= layers) fail("targets", "layer " + std::to_string(t) + " does not exist");
    if (c.rank > std::max(c.model.in_dim(t), c.model.out_dim(t)))
      fail("rank", std::to_string(c.rank) + " exceeds both dimensions of target layer " + std::to_string(t));
  }
  if (c.approach == Approach::split) {
    if (!c.split_layer) fail("split_layer", "required when approach = split");
    if (*c.split_layer < 1 || *c.split_layer >= layers) fail("split_layer", "must lie in [1, " + std::to_string(layers - 1) + "]");
  } else if (c.split_layer) {
    fail("split_layer", "only valid when approach = split");
  }
  if (c.clients == 0) fail("count", "must be at least 1");
  if (c.samples_per_client == 0) fail("samples_per_client", "must be at least 1");
  if (c.partition.kind == PartitionScheme::Kind::iid_sizes) {
    if (c.partition.sizes.size() != c.clients) fail("sizes", "needs one entry per client");
    for (auto s : c.partition.sizes)
      if (s == 0) fail("sizes", "every shard must be non-empty");
  }
  if (c.partition.alpha < 0.0) fail("skew_alpha", "must be non-negative");
  if (c.noise_sd < 0.0) fail("noise_sd", "must be non-negative");
  for (auto t : c.teacher_layers)
    if (t >= layers) fail("teacher_layers", "layer " + std::to_string(t) + " does not exist");
  if (c.teacher_rank == 0) fail("teacher_rank", "must be at least 1");
  if (c.epochs == 0) fail("epochs", "must be at least 1");
  if (c.batch_size == 0) fail("batch_size", "must be at least 1");
  if (!(c.lr >= 0.0)) fail("lr", "must be non-negative");
  if (!(c.downlink_bps > 0.0)) fail("downlink_bps", "must be positive");
  if (!(c.uplink_bps > 0.0)) fail("uplink_bps", "must be positive");
  if (!(c.d2d_bps > 0.0)) fail("d2d_bps", "must be positive");
  if (c.latency_s < 0.0) fail("latency_s", "must be non-negative");
  if (c.compute_s_per_param_sample < 0.0) fail("compute_s_per_param_sample", "must be non-negative");
  if (c.output.empty()) fail("output", "must not be empty");
}

/// Total training rows across clients.
inline std::size_t total_samples(const ExperimentConfig& c) {
  if (c.partition.kind == PartitionScheme::Kind::iid_sizes) {
    std::size_t n = 0;
    for (auto s : c.partition.sizes) n += s;
    return n;
  }
  return c.clients * c.samples_per_client;
}

inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  std::istringstream is(text);
  std::string raw, section;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> key_lines;
  while (std::getline(is, raw)) {
    ++lineno;
    std::string line = raw;
    if (auto hash = line.find_first_of("#;"); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      static const std::set<std::string> sections{"model", "finetune", "protocol", "clients", "data",
                                                  "trainer", "links", "sizing", "run"};
      if (!sections.contains(section)) throw ConfigError("line " + std::to_string(lineno) + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const detail::ConfigReader v(lineno, key, detail::trim(line.substr(eq + 1)));
    if (section.empty()) v.fail("key outside of any section");
    if (!seen.insert(section + "." + key).second) v.fail("duplicate key");
    const std::string sk = section + "." + key;
    key_lines[key] = lineno;

    if (sk == "model.layer_dims") {
      c.model.layer_dims = v.sizes();
    } else if (sk == "finetune.mode") {
      c.mode = v.choice<TrainMode>({{"full", TrainMode::full}, {"lora", TrainMode::lora}});
    } else if (sk == "finetune.rank") {
      c.rank = v.size();
    } else if (sk == "finetune.alpha") {
      c.alpha = v.real();
    } else if (sk == "finetune.targets") {
      auto t = v.sizes();
      c.targets = {t.begin(), t.end()};
    } else if (sk == "protocol.approach") {
      c.approach = v.choice<Approach>(
          {{"parallel", Approach::parallel}, {"split", Approach::split}, {"sequential", Approach::sequential}});
    } else if (sk == "protocol.split_layer") {
      c.split_layer = v.size();
    } else if (sk == "protocol.rounds") {
      c.rounds = v.size();
    } else if (sk == "protocol.order") {
      c.order = v.choice<OrderPolicy>({{"random", OrderPolicy::random}, {"cycle", OrderPolicy::fixed_cycle}});
    } else if (sk == "clients.count") {
      c.clients = v.size();
    } else if (sk == "clients.samples_per_client") {
      c.samples_per_client = v.size();
    } else if (sk == "clients.partition") {
      c.partition.kind = v.choice<PartitionScheme::Kind>({{"iid_equal", PartitionScheme::Kind::iid_equal},
                                                          {"iid_sizes", PartitionScheme::Kind::iid_sizes},
                                                          {"label_skew", PartitionScheme::Kind::label_skew}});
    } else if (sk == "clients.sizes") {
      c.partition.sizes = v.sizes();
    } else if (sk == "clients.skew_alpha") {
      c.partition.alpha = v.real();
    } else if (sk == "data.seed") {
      c.data_seed = v.u64();
    } else if (sk == "data.noise_sd") {
      c.noise_sd = v.real();
    } else if (sk == "data.teacher_rank") {
      c.teacher_rank = v.size();
    } else if (sk == "data.teacher_scale") {
      c.teacher_scale = v.real();
    } else if (sk == "data.teacher_layers") {
      auto t = v.sizes();
      c.teacher_layers = {t.begin(), t.end()};
    } else if (sk == "data.holdout") {
      c.holdout = v.size();
    } else if (sk == "trainer.epochs") {
      c.epochs = v.size();
    } else if (sk == "trainer.batch_size") {
      c.batch_size = v.size();
    } else if (sk == "trainer.lr") {
      c.lr = v.real();
    } else if (sk == "links.downlink_bps") {
      c.downlink_bps = v.real();
    } else if (sk == "links.uplink_bps") {
      c.uplink_bps = v.real();
    } else if (sk == "links.d2d_bps") {
      c.d2d_bps = v.real();
    } else if (sk == "links.latency_s") {
      c.latency_s = v.real();
    } else if (sk == "links.compute_s_per_param_sample") {
      c.compute_s_per_param_sample = v.real();
    } else if (sk == "sizing.precision") {
      c.precision = v.choice<Precision>({{"f64", Precision::f64}, {"f16", Precision::f16}});
    } else if (sk == "run.seed") {
      c.seed = v.u64();
    } else if (sk == "run.output") {
      c.output = v.str();
    } else {
      v.fail("unknown key in [" + section + "]");
    }
  }
  try {
    validate(c);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    const std::string key = msg.substr(0, msg.find(':'));
    if (auto it = key_lines.find(key); it != key_lines.end())
      throw ConfigError("line " + std::to_string(it->second) + ": " + msg);
    throw;
  }
  return c;
}

inline std::string serialize(const ExperimentConfig& c) {
  auto num = [](double x) { return format_double(x); };
  std::ostringstream os;
  os << "[model]\nlayer_dims = " << detail::join_sizes(c.model.layer_dims) << "\n\n";
  os << "[finetune]\nmode = " << (c.mode == TrainMode::full ? "full" : "lora") << "\nrank = " << c.rank
     << "\nalpha = " << num(c.alpha) << "\ntargets = " << detail::join_sizes(c.targets) << "\n\n";
  os << "[protocol]\napproach = "
     << (c.approach == Approach::parallel ? "parallel" : c.approach == Approach::split ? "split" : "sequential") << '\n';
  if (c.split_layer) os << "split_layer = " << *c.split_layer << '\n';
  os << "rounds = " << c.rounds << "\norder = " << (c.order == OrderPolicy::random ? "random" : "cycle") << "\n\n";
  os << "[clients]\ncount = " << c.clients << "\nsamples_per_client = " << c.samples_per_client << "\npartition = ";
  switch (c.partition.kind) {
    case PartitionScheme::Kind::iid_equal: os << "iid_equal"; break;
    case PartitionScheme::Kind::iid_sizes: os << "iid_sizes"; break;
    case PartitionScheme::Kind::label_skew: os << "label_skew"; break;
  }
  os << '\n';
  if (!c.partition.sizes.empty()) os << "sizes = " << detail::join_sizes(c.partition.sizes) << '\n';
  os << "skew_alpha = " << num(c.partition.alpha) << "\n\n";
  os << "[data]\nseed = " << c.data_seed << "\nnoise_sd = " << num(c.noise_sd) << "\nteacher_rank = " << c.teacher_rank
     << "\nteacher_scale = " << num(c.teacher_scale) << "\nteacher_layers = " << detail::join_sizes(c.teacher_layers)
     << "\nholdout = " << c.holdout << "\n\n";
  os << "[trainer]\nepochs = " << c.epochs << "\nbatch_size = " << c.batch_size << "\nlr = " << num(c.lr) << "\n\n";
  os << "[links]\ndownlink_bps = " << num(c.downlink_bps) << "\nuplink_bps = " << num(c.uplink_bps)
     << "\nd2d_bps = " << num(c.d2d_bps) << "\nlatency_s = " << num(c.latency_s)
     << "\ncompute_s_per_param_sample = " << num(c.compute_s_per_param_sample) << "\n\n";
  os << "[sizing]\nprecision = " << (c.precision == Precision::f16 ? "f16" : "f64") << "\n\n";
  os << "[run]\nseed = " << c.seed << "\noutput = " << c.output << '\n';
  return os.str();
}

}  // namespace fgs
