#pragma once

#include <span>
#include <vector>

#include "dynconn/common.hpp"
#include "dynconn/rng.hpp"

namespace dynconn {

// Per-vertex endpoint pools, one growable array per (depth, type) pair that
// is actually populated. Removal is swap-remove; the caller keeps each edge's
// slot index (one per endpoint) and patches the edge that got swapped in.
class LeafStore {
 public:
  explicit LeafStore(std::uint32_t n) : pools_(n) {}

  // Returns the slot of the inserted endpoint.
  std::uint32_t insert(VertexId v, int pair, EdgeId e) {
    Pools& ps = pools_[v];
    for (auto& p : ps) {
      if (p.pair == pair) {
#ifndef DYNCONN_NO_ASSERT
        for (EdgeId x : p.items)
          DYNCONN_ASSERT(x != e, "duplicate endpoint in leaf store");
#endif
        p.items.push_back(e);
        return static_cast<std::uint32_t>(p.items.size() - 1);
      }
    }
    ps.push_back(PairPool{static_cast<std::uint8_t>(pair), {e}});
    return 0;
  }

  // Removes the endpoint at `slot`; returns the edge id that now occupies
  // `slot` (its stored slot must be updated by the caller), or kNil.
  EdgeId remove(VertexId v, int pair, std::uint32_t slot) {
    PairPool& p = pool(v, pair);
    DYNCONN_ASSERT(slot < p.items.size(), "stale endpoint handle");
    EdgeId moved = kNil;
    if (slot + 1 != p.items.size()) {
      p.items[slot] = p.items.back();
      moved = p.items[slot];
    }
    p.items.pop_back();
    return moved;
  }

  std::span<const EdgeId> enumerate(VertexId v, int pair) const {
    const PairPool* p = find(v, pair);
    if (!p) return {};
    return {p->items.data(), p->items.size()};
  }

  std::size_t size(VertexId v, int pair) const {
    const PairPool* p = find(v, pair);
    return p ? p->items.size() : 0;
  }

  EdgeId sample_uniform(VertexId v, int pair, Rng& rng) const {
    const PairPool* p = find(v, pair);
    if (!p || p->items.empty()) raise(Errc::EmptyStore, "sample from empty endpoint store");
    return p->items[rng.bounded(p->items.size())];
  }

  // Pairs with at least one endpoint at v.
  PairSet occupied(VertexId v) const {
    PairSet s = 0;
    for (const auto& p : pools_[v])
      if (!p.items.empty()) s |= PairSet{1} << p.pair;
    return s;
  }

 private:
  struct PairPool {
    std::uint8_t pair;
    std::vector<EdgeId> items;
  };
  using Pools = std::vector<PairPool>;

  const PairPool* find(VertexId v, int pair) const {
    for (const auto& p : pools_[v])
      if (p.pair == pair) return &p;
    return nullptr;
  }
  PairPool& pool(VertexId v, int pair) {
    for (auto& p : pools_[v])
      if (p.pair == pair) return p;
    raise(Errc::Corruption, "missing endpoint pool");
  }

  std::vector<Pools> pools_;
};

}  // namespace dynconn
