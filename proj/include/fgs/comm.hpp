#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fgs/data.hpp"
#include "fgs/error.hpp"

namespace fgs {

// Transfer sizing only; training always computes in f64.
enum class Precision { f64, f16 };

constexpr std::uint64_t bytes_per_param(Precision p) { return p == Precision::f64 ? 8 : 2; }

// One megabyte is 10^6 bytes throughout.
constexpr std::uint64_t bytes_of(std::uint64_t param_count, Precision p) { return param_count * bytes_per_param(p); }

constexpr double kBytesPerMegabyte = 1e6;

enum class LinkKind { uplink, downlink, d2d };

struct LinkModel {
  double bandwidth = 1.0;     // bytes per second
  double base_latency = 0.0;  // seconds
  LinkKind kind = LinkKind::downlink;

  friend bool operator==(const LinkModel&, const LinkModel&) = default;
};

inline double transfer_time(std::uint64_t bytes, const LinkModel& link) {
  if (!(link.bandwidth > 0.0)) throw ConfigError("link bandwidth must be positive");
  return link.base_latency + static_cast<double>(bytes) / link.bandwidth;
}

// Synthetic local compute model: seconds = c * params * samples.
struct ComputeModel {
  double seconds_per_param_sample = 1e-8;

  double seconds(std::uint64_t params, std::uint64_t samples) const {
    return seconds_per_param_sample * static_cast<double>(params) * static_cast<double>(samples);
  }
};

/// Transfer endpoint: the parameter server or a client id.
struct Endpoint {
  static constexpr std::uint32_t kServer = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kServer;

  static Endpoint server() { return {}; }
  static Endpoint client(std::uint32_t i) { return {i}; }
  bool is_server() const { return id == kServer; }
  std::string str() const { return is_server() ? "server" : std::to_string(id); }

  friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

enum class PayloadKind { model_down, model_up, model_relay, smash_up, labels_up, cut_grad_down };

inline const char* payload_name(PayloadKind k) {
  switch (k) {
    case PayloadKind::model_down: return "model_down";
    case PayloadKind::model_up: return "model_up";
    case PayloadKind::model_relay: return "model_relay";
    case PayloadKind::smash_up: return "smash_up";
    case PayloadKind::labels_up: return "labels_up";
    case PayloadKind::cut_grad_down: return "cut_grad_down";
  }
  return "?";
}

struct CommEvent {
  std::size_t round = 0;  // 1-based global round
  Endpoint src;
  Endpoint dst;
  PayloadKind kind = PayloadKind::model_down;
  std::uint64_t bytes = 0;
  double seconds = 0.0;
};

struct CommTotals {
  std::uint64_t bytes = 0;
  double seconds = 0.0;
};

/// Append-only record of every transfer in an experiment.
class CommLedger {
 public:
  void record(const CommEvent& e) {
    if (e.seconds < 0.0 || !std::isfinite(e.seconds)) throw Error("ledger event seconds must be finite and >= 0");
    if (!events_.empty() && e.round < events_.back().round) throw Error("ledger events must arrive in round order");
    events_.push_back(e);
    totals_.bytes += e.bytes;
    totals_.seconds += e.seconds;
  }

  const std::vector<CommEvent>& events() const noexcept { return events_; }

  CommTotals totals() const noexcept { return totals_; }

  /// Sum over events with round <= up_to_round.
  CommTotals totals(std::size_t up_to_round) const {
    CommTotals t;
    for (const auto& e : events_) {
      if (e.round > up_to_round) break;
      t.bytes += e.bytes;
      t.seconds += e.seconds;
    }
    return t;
  }

  CommTotals round_totals(std::size_t round) const {
    CommTotals t;
    for (const auto& e : events_) {
      if (e.round == round) {
        t.bytes += e.bytes;
        t.seconds += e.seconds;
      }
    }
    return t;
  }

  std::size_t count(std::size_t round, PayloadKind kind) const {
    std::size_t n = 0;
    for (const auto& e : events_) n += e.round == round && e.kind == kind;
    return n;
  }

  void write_csv(std::ostream& os) const {
    os << "round,src,dst,kind,bytes,seconds\n";
    for (const auto& e : events_) {
      os << e.round << ',' << e.src.str() << ',' << e.dst.str() << ',' << payload_name(e.kind) << ',' << e.bytes << ','
         << format_double(e.seconds) << '\n';
    }
  }

 private:
  std::vector<CommEvent> events_;
  CommTotals totals_;
};

}  // namespace fgs
