#include <algorithm>
#include <cstdio>
#include <cstdlib>

#include "dynconn/hierarchy.hpp"

// Induced (i,t)-forest machinery. Two representations coexist for the link
// between consecutive (i,t)-nodes: shortcut chains (the canonical one) and
// "parked" local-tree status marks, used on torn paths during a deletion
// cascade and reconciled by rebuild_path. Every walk here reads both.

namespace dynconn {

namespace {
constexpr PairSet bit_of(int pair) { return PairSet{1} << pair; }
}  // namespace

NodeId Hierarchy::resolve_head(NodeId c, int pair) {
  return (nodes_[c].is_node >> pair & 1) ? c : chase_chain_down(c, pair);
}

NodeId Hierarchy::chase_chain_down(NodeId x, int pair) {
  NodeId cur = x;
  for (;;) {
    if (cur != x && (nodes_[cur].is_node >> pair & 1)) return cur;
    if (hspace_.get_down(cur, pair) != kNil) {
      NodeId nxt = hspace_.traverse_down(
          cur, pair, [&](NodeId y) { return (nodes_[y].is_node >> pair & 1) != 0; });
      DYNCONN_ASSERT(nxt != cur, "chain made no progress");
      cur = nxt;
      continue;
    }
    // parked continuation
    DYNCONN_ASSERT(nodes_[cur].ltree, "chain ran into a hierarchy leaf");
    LocalId h = lf_.unique_status_leaf(*nodes_[cur].ltree, pair);
    DYNCONN_ASSERT(h != kNil, "chain interior without continuation");
    cur = lf_.node(h).child;
  }
}

NodeId Hierarchy::itf_parent(NodeId v, int pair) {
  int i = pair_depth(pair);
  if (nodes_[v].depth == i) raise(Errc::NoParent, "(i,t)-root has no parent");
  NodeId cur = v;
  for (;;) {
    if (cur != v && (nodes_[cur].is_node >> pair & 1)) return cur;
    ShortcutId s = hspace_.get_up(cur, pair);
    if (s != kNil) {
      cur = hspace_.at(s).top;
      continue;
    }
    NodeId p = parent_of(cur);
    DYNCONN_ASSERT(p != kNil, "itf_parent climbed past a root");
    DYNCONN_ASSERT(lf_.node(nodes_[cur].rep).status >> pair & 1,
                   "(i,t)-node disconnected from its parent");
    cur = p;
  }
}

std::vector<NodeId> Hierarchy::itf_children(NodeId v, int pair) {
  std::vector<NodeId> out;
  if (nodes_[v].depth == layout_.dmax) return out;
  LocalForest::Tree& t = *nodes_[v].ltree;
  std::vector<LocalId> heads;
  lf_.enumerate_status(t, pair, [&](LocalId l) { heads.push_back(l); });
  if (!heads.empty()) {
    out.reserve(heads.size());
    for (LocalId l : heads) out.push_back(resolve_head(lf_.node(l).child, pair));
    return out;
  }
  if (hspace_.get_down(v, pair) != kNil) out.push_back(chase_chain_down(v, pair));
  return out;
}

NodeId Hierarchy::it_root_of(NodeId leaf, int pair) {
  int i = pair_depth(pair);
  NodeId cur = leaf;
  while (nodes_[cur].depth > i) cur = itf_parent(cur, pair);
  return cur;
}

void Hierarchy::attach_local(NodeId p, NodeId head, int pair) {
  std::uint64_t cnt = pair_type(pair) == EndpointType::Primary
                          ? node_primary_value(head, pair_depth(pair))
                          : 0;
  lf_.leaf_add_status(*nodes_[p].ltree, p, nodes_[head].rep, pair, cnt);
  nodes_[head].is_node |= bit_of(pair);
}

// Lays the chain representation along a root-to-leaf slice: fundamentals with
// the pair bit on untouched nodes, parked marks on torn ones.
void Hierarchy::build_chain(const std::vector<NodeId>& path_down, int pair) {
  for (std::size_t k = 0; k + 1 < path_down.size(); ++k) {
    NodeId p = path_down[k], c = path_down[k + 1];
    if (nodes_[p].torn) {
      std::uint64_t cnt = pair_type(pair) == EndpointType::Primary
                              ? node_primary_value(c, pair_depth(pair))
                              : 0;
      lf_.leaf_add_status(*nodes_[p].ltree, p, nodes_[c].rep, pair, cnt);
    } else {
      ShortcutId f = hspace_.get_or_create(p, c);
      hspace_.add_membership(f, bit_of(pair));
    }
  }
}

void Hierarchy::itf_add_leaf(NodeId x, int pair) {
  int i = pair_depth(pair);
  if (nodes_[x].depth == i) return;  // leaf doubles as the root: nothing to wire
  new_epoch();
  std::vector<NodeId> climb{x};
  mark(x);
  NodeId prev = x;
  NodeId cur = parent_of(x);
  auto climb_child_of = [&](NodeId q) {
    for (std::size_t k = climb.size(); k-- > 0;)
      if (climb[k] == q) {
        DYNCONN_ASSERT(k > 0, "no climb child below attachment");
        return climb[k - 1];
      }
    return climb.back();  // q is the node under test (not pushed): child is prev
  };
  // Top-down slice [q, ..., x] of the climbed path. q is either a climbed
  // node or the node currently under test (not yet pushed).
  auto chain_down_from = [&](NodeId q) {
    std::vector<NodeId> slice{q};
    std::size_t pos = climb.size();  // q == cur: everything climbed is below q
    for (std::size_t j = 0; j < climb.size(); ++j)
      if (climb[j] == q) pos = j;
    for (std::size_t j = pos; j-- > 0;) slice.push_back(climb[j]);
    return slice;
  };

  for (;;) {
    DYNCONN_ASSERT(cur != kNil, "add-status climb fell off the hierarchy");
    mark(cur);
    LocalForest::Tree& t = *nodes_[cur].ltree;
    PairSet rs = lf_.root_status(t);
    bool heads = (rs >> pair & 1) != 0;
    if ((nodes_[cur].is_branching >> pair & 1) || heads) {
      attach_local(cur, prev, pair);
      nodes_[cur].is_node |= bit_of(pair);
      if (lf_.unique_status_leaf(t, pair) == kNil) {
        nodes_[cur].is_branching |= bit_of(pair);
        lf_.enumerate_status(t, pair, [&](LocalId l) {
          nodes_[lf_.node(l).child].is_node |= bit_of(pair);
        });
      }
      build_chain(chain_down_from(prev), pair);
      return;
    }
    if (hspace_.get_down(cur, pair) != kNil) {
      // Binary search for the branching point along the stored chain.
      NodeId a = cur;
      for (;;) {
        ShortcutId s = hspace_.get_down(a, pair);
        if (s == kNil) {
          // hybrid: parked continuation at a
          LocalForest::Tree& ta = *nodes_[a].ltree;
          DYNCONN_ASSERT(lf_.root_status(ta) >> pair & 1, "chain interior lost its continuation");
          LocalId u = lf_.unique_status_leaf(ta, pair);
          DYNCONN_ASSERT(u != kNil, "ambiguous parked chain");
          NodeId h = lf_.node(u).child;
          if (marked(h)) {
            a = h;
            continue;
          }
          NodeId cx = climb_child_of(a);
          attach_local(a, cx, pair);
          nodes_[h].is_node |= bit_of(pair);
          nodes_[a].is_node |= bit_of(pair);
          nodes_[a].is_branching |= bit_of(pair);
          build_chain(chain_down_from(cx), pair);
          return;
        }
        if (nodes_[hspace_.at(s).bottom].is_node >> pair & 1) {
          // chain ended at the (i,t)-child without diverging: x sits below an
          // (i,t)-node, which the climb would have caught
          NodeId bot = hspace_.at(s).bottom;
          if (marked(bot)) raise(Errc::Corruption, "climb skipped an (i,t)-node");
        }
        if (marked(hspace_.at(s).bottom)) {
          a = hspace_.at(s).bottom;
          continue;
        }
        while (hspace_.at(s).power > 0) {
          auto [s1, s2] = hspace_.uncover(s, pair);
          s = marked(hspace_.at(s1).bottom) ? s2 : s1;
        }
        NodeId q = hspace_.at(s).top;
        NodeId c_old = hspace_.at(s).bottom;
        DYNCONN_ASSERT(marked(q), "divergence off the climbed path");
        hspace_.remove_membership(s, bit_of(pair));
        NodeId cx = climb_child_of(q);
        attach_local(q, c_old, pair);
        attach_local(q, cx, pair);
        nodes_[q].is_node |= bit_of(pair);
        nodes_[q].is_branching |= bit_of(pair);
        build_chain(chain_down_from(cx), pair);
        return;
      }
    }
    if (nodes_[cur].depth == i) {
      // fresh (i,t)-root
      nodes_[cur].is_node |= bit_of(pair);
      build_chain(chain_down_from(cur), pair);
      return;
    }
    climb.push_back(cur);
    prev = cur;
    cur = parent_of(cur);
  }
}

// y's subtree no longer holds any (depth,type) endpoint: detach y from the
// forest and let the loss propagate upward.
static const bool kTraceRemove = getenv("DYNCONN_TRACE_REMOVE") != nullptr;

void Hierarchy::itf_remove_leaf(NodeId x, int pair) {
  int i = pair_depth(pair);
  if (nodes_[x].depth == i) return;  // single-node tree; leaf bit handled by caller
  if (kTraceRemove && pair == 1)
    fprintf(stderr, "RM leaf=%u pair=%d\n", x, pair);
  NodeId y = x;
  for (;;) {
    if (nodes_[y].depth < layout_.dmax) {
      nodes_[y].is_node &= ~bit_of(pair);
      nodes_[y].is_branching &= ~bit_of(pair);
    }
    if (nodes_[y].depth == i) return;  // the root itself vanished
    // clear the edge representation from y up to its (i,t)-parent
    NodeId cur = y;
    NodeId u = kNil;
    for (;;) {
      if (cur != y && (nodes_[cur].is_node >> pair & 1)) {
        u = cur;
        break;
      }
      ShortcutId s = hspace_.get_up(cur, pair);
      if (s != kNil) {
        NodeId top = hspace_.at(s).top;
        hspace_.remove_membership(s, bit_of(pair));
        cur = top;
        continue;
      }
      NodeId p = parent_of(cur);
      DYNCONN_ASSERT(p != kNil, "remove-status climbed past a root");
      DYNCONN_ASSERT(lf_.node(nodes_[cur].rep).status >> pair & 1,
                     "removing a disconnected (i,t)-node");
      lf_.leaf_remove_status(*nodes_[p].ltree, p, nodes_[cur].rep, pair);
      if (nodes_[p].is_node >> pair & 1) {
        u = p;
        break;
      }
      cur = p;
    }
    DYNCONN_ASSERT(u != kNil, "no (i,t)-parent found on removal");
    if (kTraceRemove && pair == 1)
      fprintf(stderr, "RM   y=%u -> u=%u torn=%d rs_bit=%d\n", y, u, nodes_[u].torn,
              (int)(lf_.root_status(*nodes_[u].ltree) >> pair & 1));
    bool primary = pair_type(pair) == EndpointType::Primary;
    LocalForest::Tree& t = *nodes_[u].ltree;
    if (lf_.root_status(t) >> pair & 1) {
      // u keeps other (i,t)-children. Its counter loses the removed side's
      // contribution, as do every live ancestor's.
      if (nodes_[u].torn) {
        if (primary) {
          nodes_[u].counters.set(layout_, i, lf_.root_counter(t, i));
          update_counters_upward(u, i);
        }
        return;  // rebuild recomputes branching facts
      }
      LocalId uniq = lf_.unique_status_leaf(t, pair);
      if (uniq == kNil) {
        if (primary) {
          nodes_[u].counters.set(layout_, i, lf_.root_counter(t, i));
          update_counters_upward(u, i);
        }
        return;  // still branching
      }
      // un-branch: the surviving head's edge becomes a covered fundamental
      NodeId q = lf_.node(uniq).child;
      nodes_[u].is_branching &= ~bit_of(pair);
      lf_.leaf_remove_status(t, u, uniq, pair);
      ShortcutId f = hspace_.get_or_create(u, q);
      hspace_.add_membership(f, bit_of(pair));
      if (nodes_[q].depth != layout_.dmax && !(nodes_[q].is_branching >> pair & 1))
        nodes_[q].is_node &= ~bit_of(pair);
      if (nodes_[u].depth != i) {
        NodeId up = parent_of(u);
        bool case4 = up != kNil && (lf_.node(nodes_[u].rep).status >> pair & 1);
        if (!case4) nodes_[u].is_node &= ~bit_of(pair);
      }
      if (primary) {
        nodes_[u].counters.set(layout_, i, nodes_[q].counters.get(layout_, i));
        update_counters_upward(u, i);
      }
      return;
    }
    if (primary) nodes_[u].counters.set(layout_, i, ApproxCounter{});
    y = u;  // u lost its last (i,t)-child; keep unwinding
  }
}

void Hierarchy::bulk_retag(NodeId root, int pair, const std::vector<NodeId>& minus,
                           const std::vector<NodeId>& plus, int pair_new) {
  int i = pair_depth(pair), i2 = pair_depth(pair_new);
  if (i2 != i && i2 != i + 1) raise(Errc::Contract, "bulk retag target depth must be i or i+1");
  // Materialize the dummy tree: the (i,t)-tree restricted to S+ paths, as
  // explicit node/child lists; its DFS leaf order drives the adds.
  new_epoch();
  for (NodeId l : plus) mark(l);
  struct DummyNode {
    NodeId h;
    std::vector<std::uint32_t> kids;
    bool keep = false;
  };
  std::vector<DummyNode> dummy;
  std::vector<NodeId> order;
  auto build = [&](auto&& self, NodeId x) -> std::uint32_t {
    std::uint32_t id = static_cast<std::uint32_t>(dummy.size());
    dummy.push_back({x, {}, false});
    if (nodes_[x].depth == layout_.dmax) {
      dummy[id].keep = marked(x);
      if (dummy[id].keep) order.push_back(x);
      return id;
    }
    for (NodeId c : itf_children(x, pair)) {
      std::uint32_t k = self(self, c);
      if (dummy[k].keep) {
        dummy[id].kids.push_back(k);
        dummy[id].keep = true;
      }
    }
    return id;
  };
  bool rooted = (nodes_[root].is_node >> pair & 1) != 0;
  if (!rooted && nodes_[root].ltree)
    rooted = (lf_.root_status(*nodes_[root].ltree) >> pair & 1) != 0;
  if (rooted) build(build, root);
  for (NodeId l : order) {
    if (!(nodes_[l].is_node >> pair_new & 1)) {
      set_leaf_status_bit(l, pair_new, true);
      itf_add_leaf(l, pair_new);
    }
  }
  for (NodeId l : minus) {
    if (nodes_[l].is_node >> pair & 1) {
      set_leaf_status_bit(l, pair, false);
      itf_remove_leaf(l, pair);
    }
  }
}

}  // namespace dynconn
