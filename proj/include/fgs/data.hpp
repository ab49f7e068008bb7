#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fgs/model.hpp"
#include "fgs/rng.hpp"

namespace fgs {

struct Dataset {
  Tensor features;  // [n, d_in]
  Tensor targets;   // [n, d_out]

  std::size_t size() const { return features.size() ? features.rows() : 0; }
  std::size_t in_dim() const { return features.cols(); }
  std::size_t out_dim() const { return targets.cols(); }

  Dataset rows(std::span<const std::size_t> ids) const { return {features.row_slice(ids), targets.row_slice(ids)}; }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline Dataset concat(std::span<const Dataset> parts) {
  if (parts.empty()) throw ShapeError("concat of zero datasets");
  const std::size_t din = parts[0].in_dim(), dout = parts[0].out_dim();
  std::vector<double> x, y;
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.in_dim() != din || p.out_dim() != dout) throw ShapeError("concat: dataset widths differ");
    x.insert(x.end(), p.features.data().begin(), p.features.data().end());
    y.insert(y.end(), p.targets.data().begin(), p.targets.data().end());
    n += p.size();
  }
  return {Tensor({n, din}, std::move(x)), Tensor({n, dout}, std::move(y))};
}

/// Features ~ N(0, 1); targets = teacher(features) + N(0, noise_sd).
inline Dataset make_teacher_dataset(const ModelParams& teacher, std::size_t n, double noise_sd, std::uint64_t seed) {
  if (n == 0) throw ConfigError("dataset size must be at least 1");
  if (teacher.layers.empty()) throw ConfigError("teacher model has no layers");
  Rng rng(seed);
  Tensor x({n, teacher.layers.front().in_dim()});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal(0.0, 1.0);
  Tensor y = predict(teacher, nullptr, x);
  if (noise_sd > 0.0) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += rng.normal(0.0, noise_sd);
  }
  return {std::move(x), std::move(y)};
}

/// Teacher is a hidden random MLP [d_in, 16, d_out].
inline Dataset make_teacher_dataset(std::size_t d_in, std::size_t d_out, std::size_t n, double noise_sd,
                                    std::uint64_t seed) {
  const ModelParams teacher = init_model(ModelSpec{{d_in, 16, d_out}}, derive_seed(seed, 0x7eac));
  return make_teacher_dataset(teacher, n, noise_sd, seed);
}

struct PartitionScheme {
  enum class Kind { iid_equal, iid_sizes, label_skew };
  Kind kind = Kind::iid_equal;
  std::vector<std::size_t> sizes;  // iid_sizes
  double alpha = 1.0;              // label_skew: 0 = sorted by target, large = iid

  friend bool operator==(const PartitionScheme&, const PartitionScheme&) = default;
};

namespace detail {

inline std::vector<std::size_t> equal_sizes(std::size_t n, std::size_t k) {
  std::vector<std::size_t> s(k, n / k);
  for (std::size_t i = 0; i < n % k; ++i) ++s[i];
  return s;
}

}  // namespace detail

/// Disjoint shards covering every row once. Row order inside a shard is the
/// order rows were dealt, which depends only on the seed.
inline std::vector<Dataset> partition(const Dataset& ds, std::size_t n_clients, const PartitionScheme& scheme,
                                      std::uint64_t seed) {
  const std::size_t n = ds.size();
  if (n_clients == 0) throw ConfigError("partition needs at least one client");
  if (n_clients > n) {
    throw ConfigError("cannot split " + std::to_string(n) + " rows across " + std::to_string(n_clients) + " clients");
  }
  std::vector<std::size_t> sizes;
  if (scheme.kind == PartitionScheme::Kind::iid_sizes) {
    sizes = scheme.sizes;
    if (sizes.size() != n_clients) throw ConfigError("iid_sizes lists " + std::to_string(sizes.size()) + " sizes for " + std::to_string(n_clients) + " clients");
    if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != n) throw ConfigError("iid_sizes must sum to the dataset size");
    if (std::find(sizes.begin(), sizes.end(), std::size_t{0}) != sizes.end()) throw ConfigError("every shard must be non-empty");
  } else {
    sizes = detail::equal_sizes(n, n_clients);
  }

  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (scheme.kind == PartitionScheme::Kind::label_skew) {
    if (scheme.alpha < 0.0) throw ConfigError("label_skew alpha must be non-negative");
    // Sort by first target column, jittered by alpha * U(0,1) on the rank scale.
    std::vector<std::size_t> by_target = order;
    std::stable_sort(by_target.begin(), by_target.end(),
                     [&](std::size_t a, std::size_t b) { return ds.targets.at(a, 0) < ds.targets.at(b, 0); });
    std::vector<double> score(n);
    for (std::size_t r = 0; r < n; ++r) score[by_target[r]] = static_cast<double>(r) / static_cast<double>(n) + scheme.alpha * rng.uniform01();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  } else {
    rng.shuffle(std::span<std::size_t>(order));
  }

  std::vector<Dataset> shards;
  std::size_t at = 0;
  for (std::size_t s : sizes) {
    shards.push_back(ds.rows(std::span<const std::size_t>(order).subspan(at, s)));
    at += s;
  }
  return shards;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV with header x0..x{d_in-1},y0..y{d_out-1}; one row per sample.
inline void save_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  for (std::size_t j = 0; j < ds.in_dim(); ++j) os << (j ? "," : "") << 'x' << j;
  for (std::size_t j = 0; j < ds.out_dim(); ++j) os << ",y" << j;
  os << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.in_dim(); ++j) os << (j ? "," : "") << format_double(ds.features.at(i, j));
    for (std::size_t j = 0; j < ds.out_dim(); ++j) os << ',' << format_double(ds.targets.at(i, j));
    os << '\n';
  }
}

inline Dataset load_dataset_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError(path + ": missing header");
  std::size_t din = 0, dout = 0;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) {
      if (col.starts_with('x') && dout == 0) {
        ++din;
      } else if (col.starts_with('y')) {
        ++dout;
      } else {
        throw IoError(path + ": unexpected header column '" + col + "'");
      }
    }
  }
  if (din == 0 || dout == 0) throw IoError(path + ": header needs x and y columns");
  std::vector<double> x, y;
  std::size_t n = 0, lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      try {
        v = std::stod(cell);
      } catch (const std::exception&) {
        throw IoError(path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
      (col < din ? x : y).push_back(v);
      ++col;
    }
    if (col != din + dout) throw IoError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(din + dout) + " columns");
    ++n;
  }
  if (n == 0) throw IoError(path + ": no rows");
  return {Tensor({n, din}, std::move(x)), Tensor({n, dout}, std::move(y))};
}

}  // namespace fgs
