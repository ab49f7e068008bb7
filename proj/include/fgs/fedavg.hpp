#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "fgs/model.hpp"

namespace fgs {

template <class P>
struct ClientUpdate {
  std::uint32_t client_id = 0;
  P params;
  std::size_t num_samples = 0;
};

/// Sample-count weighted mean of client payloads. Updates are accumulated in
/// ascending client id whatever order they arrive in, so the result is
/// bit-identical under any permutation of `updates`.
template <class P>
P fedavg(std::span<const ClientUpdate<P>> updates) {
  if (updates.empty()) throw Error("fedavg needs at least one update");
  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return updates[a].client_id < updates[b].client_id; });

  double total = 0.0;
  std::vector<std::vector<Shape>> shapes;
  for (const auto& u : updates) {
    if (u.num_samples == 0) throw Error("fedavg: client " + std::to_string(u.client_id) + " reports zero samples");
    total += static_cast<double>(u.num_samples);
    std::vector<Shape> s;
    u.params.for_each_tensor([&](const Tensor& t) { s.push_back(t.shape()); });
    shapes.push_back(std::move(s));
  }
  for (std::size_t i = 1; i < shapes.size(); ++i) {
    if (shapes[i] != shapes[0])
      throw ShapeError("fedavg: client " + std::to_string(updates[i].client_id) + " payload shape differs from client " +
                       std::to_string(updates[0].client_id));
  }
  if (updates.size() == 1) return updates[0].params;

  P out = updates[order[0]].params;
  std::vector<Tensor*> acc;
  out.for_each_tensor([&](Tensor& t) {
    std::fill(t.data().begin(), t.data().end(), 0.0);
    acc.push_back(&t);
  });
  std::vector<Tensor> lo, hi;
  for (std::size_t k : order) {
    const double w = static_cast<double>(updates[k].num_samples) / total;
    std::size_t i = 0;
    updates[k].params.for_each_tensor([&](const Tensor& t) {
      ops::axpy(*acc[i], w, t);
      if (lo.size() <= i) {
        lo.push_back(t);
        hi.push_back(t);
      } else {
        for (std::size_t j = 0; j < t.size(); ++j) {
          lo[i][j] = std::min(lo[i][j], t[j]);
          hi[i][j] = std::max(hi[i][j], t[j]);
        }
      }
      ++i;
    });
  }
  // The exact weighted mean lies inside [min, max]; rounding can push it one
  // ulp outside, so clamp.
  for (std::size_t i = 0; i < acc.size(); ++i)
    for (std::size_t j = 0; j < acc[i]->size(); ++j) (*acc[i])[j] = std::clamp((*acc[i])[j], lo[i][j], hi[i][j]);
  return out;
}

template <class P>
P fedavg(const std::vector<ClientUpdate<P>>& updates) {
  return fedavg(std::span<const ClientUpdate<P>>(updates));
}

}  // namespace fgs
