#include "dynconn/engine.hpp"

#include <algorithm>

namespace dynconn {

Engine::Engine(std::uint32_t n, std::uint64_t seed, const EngineConfig& cfg)
    : n_(n),
      cfg_(cfg),
      rng_(seed),
      h_(n, HierarchyConfig{cfg.buffer_capacity, cfg.top_capacity}),
      forest_(n, cfg.forest_branching),
      sampler_(h_, SamplingConfig{cfg.c1, cfg.c2, cfg.race_quantum}) {}

bool Engine::connected(VertexId u, VertexId v) const {
  if (u >= n_ || v >= n_) raise(Errc::Contract, "vertex out of range");
  return forest_.connected(u, v);
}

void Engine::insert(VertexId u, VertexId v) {
  if (u == v) raise(Errc::SelfLoop, "self loops are not allowed");
  if (u >= n_ || v >= n_) raise(Errc::Contract, "vertex out of range");
  if (h_.find_edge(u, v) != kNil) raise(Errc::DuplicateEdge, "edge already present");
  ++stats_.inserts;
  if (!forest_.connected(u, v)) {
    h_.ensure_leaf(u);
    h_.ensure_leaf(v);
    NodeId ru = h_.root_of(h_.leaf_of(u));
    NodeId rv = h_.root_of(h_.leaf_of(v));
    h_.merge_promote({ru, rv});
    h_.add_edge(u, v, 1, EndpointType::Witness, EndpointType::Witness);
    forest_.link(u, v);
  } else {
    h_.add_edge(u, v, 1, EndpointType::Secondary, EndpointType::Secondary);
  }
}

void Engine::erase(VertexId u, VertexId v) {
  EdgeId e = h_.find_edge(u, v);
  if (e == kNil) raise(Errc::MissingEdge, "edge not present");
  bool witness = h_.edge(e).tu == EndpointType::Witness;
  ++stats_.deletes;
  if (!witness) {
    h_.remove_edge(e);
    return;
  }
  delete_witness(e, u, v);
}

bool Engine::dfs_step(DfsSide& side, int i, std::uint64_t my_epoch, std::uint64_t, bool) {
  int pw = pair_index(i, EndpointType::Witness);
  while (side.active < side.walks.size()) {
    VertexId w;
    EdgeId e;
    if (side.walks[side.active].next(w, e)) {
      VertexId w2 = h_.edge(e).other(w);
      NodeId comp = h_.it_root_of(h_.leaf_of(w2), pw);
      if (side_mark_.size() < h_.node_pool_size()) side_mark_.resize(h_.node_pool_size(), 0);
      if (side_mark_[comp] != my_epoch) {
        side_mark_[comp] = my_epoch;
        side.members.push_back(comp);
        side.weight += h_.node(comp).weight;
        side.walks.emplace_back(h_, comp, pw);
      }
      return true;
    }
    ++side.active;
  }
  side.done = true;
  return false;
}

void Engine::delete_witness(EdgeId e, VertexId u, VertexId v) {
  int d = h_.edge(e).depth;
  h_.remove_edge(e);
  forest_.cut(u, v);
  ++stats_.cascades;

  NodeId lu = h_.leaf_of(u), lv = h_.leaf_of(v);
  h_.uncover_path(lu, 1);
  h_.uncover_path(lv, 2);
  paranoid_counter_check("after-uncover");

  EdgeId replacement = kNil;
  for (int i = d; i >= 1 && replacement == kNil; --i) {
    ++stats_.levels_descended;
    int pw = pair_index(i, EndpointType::Witness);
    NodeId a = h_.ancestor_at_depth(lu, i);
    NodeId b = h_.ancestor_at_depth(lv, i);
    DYNCONN_ASSERT(a != b, "cascade reached identical components");
    NodeId parent = h_.parent_of(a);
    DYNCONN_ASSERT(parent != kNil && parent == h_.parent_of(b), "cascade parents disagree");
    std::uint64_t parent_weight = h_.node(parent).weight;

    if (side_mark_.size() < h_.node_pool_size()) side_mark_.resize(h_.node_pool_size(), 0);
    std::uint64_t eu = ++dfs_epoch_, ev = ++dfs_epoch_;
    DfsSide su, sv;
    side_mark_[a] = eu;
    su.members.push_back(a);
    su.weight = h_.node(a).weight;
    su.walks.emplace_back(h_, a, pw);
    side_mark_[b] = ev;
    sv.members.push_back(b);
    sv.weight = h_.node(b).weight;
    sv.walks.emplace_back(h_, b, pw);

    // Strictly alternating expansion, one witness endpoint at a time, until
    // one component is fully scanned.
    bool turn_u = true;
    while (!su.done && !sv.done) {
      dfs_step(turn_u ? su : sv, i, turn_u ? eu : ev, 0, turn_u);
      turn_u = !turn_u;
    }
    DfsSide& completed = su.done ? su : sv;
    bool completed_is_u = su.done;
    std::uint64_t wc = completed.weight;
    std::uint64_t wo = parent_weight - wc;
    bool use_completed;
    if (wc != wo) {
      use_completed = wc < wo;
    } else {
      // Tie: take the side holding the smaller endpoint of the deleted edge.
      bool u_side_preferred = u < v;
      use_completed = (completed_is_u == u_side_preferred);
    }
    DfsSide* small = &completed;
    bool small_is_u = completed_is_u;
    if (!use_completed) {
      DfsSide& other = su.done ? sv : su;
      std::uint64_t oe = su.done ? ev : eu;
      while (!other.done) dfs_step(other, i, oe, 0, !completed_is_u);
      small = &other;
      small_is_u = !completed_is_u;
    }
    DYNCONN_ASSERT(2 * small->weight <= parent_weight,
                   "smaller-side weight bound violated");  // w(c_u) <= w(u^{i-1})/2

    // The on-path member survives the merge.
    NodeId on_path = small_is_u ? a : b;
    auto it = std::find(small->members.begin(), small->members.end(), on_path);
    DYNCONN_ASSERT(it != small->members.end(), "on-path node missing from its side");
    std::iter_swap(small->members.begin(), it);
    NodeId merged = h_.merge_promote(small->members);
    paranoid_counter_check("after-merge");

    SamplingVerdict verdict = sampler_.sampling_procedure(merged, i, rng_);
    if (verdict.kind == VerdictKind::ReplacementFound) {
      replacement = verdict.edge;
      ++stats_.replacements_sampled;
    } else {
      auto er = sampler_.enumeration_procedure(merged, i);
      paranoid_counter_check("after-enumeration");
      if (er.replacement != kNil) {
        replacement = er.replacement;
        ++stats_.replacements_enumerated;
      }
    }
    if (replacement != kNil) {
      VertexId ru = h_.edge(replacement).u, rv = h_.edge(replacement).v;
      if (debug_paranoid)
        fprintf(stderr, "CONVERT edge (%u,%u) at level %d merged=%u\n", ru, rv, i, merged);
      h_.convert_to_witness(replacement);
      paranoid_counter_check("after-convert");
      forest_.link(ru, rv);
      break;
    }
    h_.split(parent, merged, small_is_u ? 1 : 2);
    paranoid_counter_check("after-split");
  }
  h_.rebuild_path(lu);
  h_.rebuild_path(lv);
  paranoid_counter_check("after-rebuild");
}

}  // namespace dynconn

namespace dynconn {

void Engine::paranoid_counter_check(const char* where) {
  if (!debug_paranoid) return;
  auto exact_below = [&](NodeId x, int pair) {
    std::uint64_t total = 0;
    std::vector<NodeId> stack{x};
    while (!stack.empty()) {
      NodeId y = stack.back();
      stack.pop_back();
      if (h_.node(y).depth == h_.dmax()) {
        total += h_.store().size(h_.node(y).vertex, pair);
        continue;
      }
      h_.lf().for_each_leaf(*h_.node(y).ltree,
                            [&](LocalId l) { stack.push_back(h_.lf().node(l).child); });
    }
    return total;
  };
  bool bad = false;
  h_.for_each_live_node([&](NodeId x, const HierarchyNode& nd) {
    for (int i = 1; i <= h_.dmax(); ++i) {
      int pair = pair_index(i, EndpointType::Primary);
      if (nd.is_node >> pair & 1) {
        std::uint64_t approx = CounterLayout::decode(nd.counters.get(h_.layout(), i));
        std::uint64_t exact = exact_below(x, pair);
        if (approx > exact) {
          fprintf(stderr, "PARANOID[%s]: node %u depth %d torn=%d i=%d approx=%llu exact=%llu\n",
                  where, x, nd.depth, nd.torn, i, (unsigned long long)approx,
                  (unsigned long long)exact);
          bad = true;
        }
      }
      // mark snapshots vs child node values
      if (nd.ltree) {
        h_.lf().for_each_leaf(*nd.ltree, [&](LocalId l) {
          if (!(h_.lf().node(l).status >> pair & 1)) return;
          std::uint64_t snap = CounterLayout::decode(h_.lf().node(l).counters.get(h_.layout(), i));
          NodeId c = h_.lf().node(l).child;
          std::uint64_t cexact = exact_below(c, pair);
          if (snap > cexact) {
            fprintf(stderr,
                    "PARANOID[%s]: stale mark at node %u (torn=%d) child %u i=%d snap=%llu "
                    "exact=%llu\n",
                    where, x, nd.torn, c, i, (unsigned long long)snap,
                    (unsigned long long)cexact);
            bad = true;
          }
        });
      }
    }
  });
  if (bad) raise(Errc::Corruption, "paranoid counter check failed");
}

}  // namespace dynconn
