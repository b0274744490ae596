#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "dynconn/common.hpp"

namespace dynconn {

// Brute-force reference graph. Recomputes everything from scratch per query;
// slow on purpose.
class OracleGraph {
 public:
  explicit OracleGraph(std::uint32_t n) : n_(n) {}

  std::uint32_t n() const { return n_; }

  void insert(VertexId u, VertexId v, int depth = 1) {
    EdgeKey k(u, v);
    if (u == v) raise(Errc::SelfLoop, "oracle: self loop");
    if (edges_.count(k)) raise(Errc::DuplicateEdge, "oracle: duplicate edge");
    edges_[k] = depth;
  }

  void erase(VertexId u, VertexId v) {
    EdgeKey k(u, v);
    if (!edges_.count(k)) raise(Errc::MissingEdge, "oracle: missing edge");
    edges_.erase(k);
  }

  bool has(VertexId u, VertexId v) const { return edges_.count(EdgeKey(u, v)) != 0; }
  std::size_t edge_count() const { return edges_.size(); }
  const std::map<EdgeKey, int>& edges() const { return edges_; }
  void set_depth(VertexId u, VertexId v, int d) { edges_.at(EdgeKey(u, v)) = d; }

  bool connected(VertexId u, VertexId v) const {
    if (u == v) return true;
    std::vector<std::vector<VertexId>> adj(n_);
    for (const auto& [k, d] : edges_) {
      adj[k.u].push_back(k.v);
      adj[k.v].push_back(k.u);
    }
    std::vector<char> seen(n_, 0);
    std::vector<VertexId> stack{u};
    seen[u] = 1;
    while (!stack.empty()) {
      VertexId x = stack.back();
      stack.pop_back();
      if (x == v) return true;
      for (VertexId y : adj[x])
        if (!seen[y]) {
          seen[y] = 1;
          stack.push_back(y);
        }
    }
    return false;
  }

  // Connected components of G_{i+1} (edges of depth >= i+1), i.e. the
  // vertex sets that depth-i hierarchy nodes must represent.
  std::vector<std::vector<VertexId>> components_at_depth(int i) const {
    DisjointSet ds(n_);
    for (const auto& [k, d] : edges_)
      if (d >= i + 1) ds.unite(k.u, k.v);
    return ds.groups();
  }

  // Invariant 1: F is a maximum spanning forest w.r.t. depths and spans every
  // component. `forest` lists the engine's current witness edges.
  bool max_spanning_forest_ok(const std::vector<EdgeKey>& forest) const {
    std::set<EdgeKey> fset(forest.begin(), forest.end());
    for (const EdgeKey& k : forest)
      if (!edges_.count(k)) return false;
    // Spans: forest connectivity == graph connectivity.
    DisjointSet df(n_), dg(n_);
    for (const EdgeKey& k : forest) {
      if (df.find(k.u) == df.find(k.v)) return false;  // cycle in F
      df.unite(k.u, k.v);
    }
    for (const auto& [k, d] : edges_) dg.unite(k.u, k.v);
    if (!same_partition(df, dg)) return false;
    // Maximality: every non-forest edge's endpoints stay connected using
    // forest edges of depth >= its own.
    for (const auto& [k, d] : edges_) {
      if (fset.count(k)) continue;
      DisjointSet dd(n_);
      for (const EdgeKey& f : forest)
        if (edges_.at(f) >= d) dd.unite(f.u, f.v);
      if (dd.find(k.u) != dd.find(k.v)) return false;
    }
    return true;
  }

  // Second, independent connectivity method for validating the oracle itself.
  bool connected_uf(VertexId u, VertexId v) const {
    DisjointSet ds(n_);
    for (const auto& [k, d] : edges_) ds.unite(k.u, k.v);
    return ds.find(u) == ds.find(v);
  }

  struct DisjointSet {
    explicit DisjointSet(std::uint32_t n) : parent(n) {
      std::iota(parent.begin(), parent.end(), 0);
    }
    VertexId find(VertexId x) const {
      while (parent[x] != x) x = parent[x];
      return x;
    }
    void unite(VertexId a, VertexId b) {
      a = find(a);
      b = find(b);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
    std::vector<std::vector<VertexId>> groups() const {
      std::map<VertexId, std::vector<VertexId>> g;
      for (VertexId v = 0; v < parent.size(); ++v) g[find(v)].push_back(v);
      std::vector<std::vector<VertexId>> out;
      for (auto& [r, vs] : g) out.push_back(std::move(vs));
      return out;
    }
    mutable std::vector<VertexId> parent;
  };

 private:
  static bool same_partition(const DisjointSet& a, const DisjointSet& b) {
    if (a.parent.size() != b.parent.size()) return false;
    for (VertexId u = 0; u < a.parent.size(); ++u)
      for (VertexId v = u + 1; v < a.parent.size(); ++v)
        if ((a.find(u) == a.find(v)) != (b.find(u) == b.find(v))) return false;
    return true;
  }

  std::uint32_t n_;
  std::map<EdgeKey, int> edges_;
};

}  // namespace dynconn
