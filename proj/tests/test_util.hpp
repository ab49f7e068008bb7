#pragma once

#include <vector>

#include "fgs/protocols.hpp"

namespace fgs::testing {

inline Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double sd = 1.0) {
  Tensor t({rows, cols});
  for (auto& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

inline Tensor random_vector(std::size_t n, Rng& rng, double sd = 1.0) {
  Tensor t({n});
  for (auto& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

inline LoraAdapter random_adapter(const ModelSpec& spec, const std::set<std::size_t>& targets, std::size_t rank,
                                  double alpha, std::uint64_t seed) {
  auto a = attach_lora(spec, targets, rank, alpha, seed);
  Rng rng(derive_seed(seed, 99));
  for (auto& [idx, f] : a.targets)
    for (auto& v : f.b.data()) v = rng.normal(0.0, 0.3);
  return a;
}

/// Dense client ids with full-mesh D2D links and shards of `per_client` rows.
inline std::vector<ClientState> make_clients(const Dataset& data, std::size_t n, std::uint64_t seed) {
  const auto shards = partition(data, n, {}, seed);
  std::vector<ClientState> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    ClientState c;
    c.id = i;
    c.shard = shards[i];
    for (std::uint32_t j = 0; j < n; ++j)
      if (j != i) c.d2d_links[j] = {6.25e6, 0.01, LinkKind::d2d};
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace fgs::testing
