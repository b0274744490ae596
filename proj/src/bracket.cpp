#include <algorithm>

#include "dynconn/hierarchy.hpp"

// Shortcut teardown and rebuild around structural changes. Tearing a path
// uncovers every H-shortcut touching it; fundamental bits are parked as local
// status marks at the child's representative, which is exactly the form the
// rebuild walk consumes.

namespace dynconn {

namespace {
constexpr PairSet bit_of(int pair) { return PairSet{1} << pair; }
}  // namespace

void Hierarchy::dismantle_node_downward(NodeId x) {
  for (;;) {
    ShortcutId best = kNil;
    int bp = 0;
    hspace_.for_each_down(x, [&](ShortcutId s) {
      if (hspace_.at(s).power > bp) {
        bp = hspace_.at(s).power;
        best = s;
      }
    });
    if (best == kNil) break;
    PairSet m = hspace_.at(best).membership;
    for (PairSet b = m; b;) {
      int pair = __builtin_ctzll(b);
      b &= b - 1;
      hspace_.uncover(best, pair);
    }
  }
  std::vector<ShortcutId> funds;
  hspace_.for_each_down(x, [&](ShortcutId s) { funds.push_back(s); });
  for (ShortcutId s : funds) {
    NodeId c = hspace_.at(s).bottom;
    PairSet bits = hspace_.at(s).membership;
    for (PairSet b = bits; b;) {
      int pair = __builtin_ctzll(b);
      b &= b - 1;
      std::uint64_t cnt = pair_type(pair) == EndpointType::Primary
                              ? node_primary_value(c, pair_depth(pair))
                              : 0;
      lf_.leaf_add_status(*nodes_[x].ltree, x, nodes_[c].rep, pair, cnt);
    }
    hspace_.remove_membership(s, bits);
  }
}

void Hierarchy::uncover_node(NodeId x) {
  if (nodes_[x].ltree) dismantle_node_downward(x);
}

void Hierarchy::uncover_path(NodeId leaf, std::uint8_t side) {
  std::vector<NodeId> path;
  for (NodeId cur = leaf; cur != kNil; cur = parent_of(cur)) path.push_back(cur);
  for (std::size_t k = path.size(); k-- > 0;) {  // root first
    NodeId x = path[k];
    nodes_[x].torn |= side;
    if (nodes_[x].ltree) dismantle_node_downward(x);
  }
}

// Re-derives the canonical representation at one node: every pair present in
// the local tree either stays local (two or more heads: branching) or turns
// into a fundamental shortcut to its unique head. Also recomputes the node's
// status bitmaps and counters. Parents must be processed before children.
void Hierarchy::rebuild_node_chains(NodeId x) {
  if (!nodes_[x].ltree) return;
  LocalForest::Tree& t = *nodes_[x].ltree;
  PairSet rs = lf_.root_status(t);
  PairSet new_branch = 0;
  for (PairSet m = rs; m;) {
    int pair = __builtin_ctzll(m);
    m &= m - 1;
    LocalId uniq = lf_.unique_status_leaf(t, pair);
    if (uniq != kNil) {
      NodeId c = lf_.node(uniq).child;
      lf_.leaf_remove_status(t, x, uniq, pair);
      ShortcutId f = hspace_.get_or_create(x, c);
      hspace_.add_membership(f, bit_of(pair));
      if (nodes_[c].depth != layout_.dmax && !(nodes_[c].is_branching >> pair & 1))
        nodes_[c].is_node &= ~bit_of(pair);
      if (pair_type(pair) == EndpointType::Primary)
        nodes_[x].counters.set(layout_, pair_depth(pair),
                               nodes_[c].counters.get(layout_, pair_depth(pair)));
    } else {
      new_branch |= bit_of(pair);
      lf_.enumerate_status(t, pair, [&](LocalId l) {
        nodes_[lf_.node(l).child].is_node |= bit_of(pair);
      });
      if (pair_type(pair) == EndpointType::Primary)
        nodes_[x].counters.set(layout_, pair_depth(pair), lf_.root_counter(t, pair_depth(pair)));
    }
  }
  nodes_[x].is_branching = new_branch;
  PairSet node_bits = new_branch;
  // Root bits: pairs at this depth whose subtree holds endpoints, whether the
  // representation is local marks (rs) or an already-stored chain.
  for (int i2 = 1; i2 <= layout_.dmax; ++i2) {
    if (i2 != nodes_[x].depth) continue;
    for (auto t2 : {EndpointType::Witness, EndpointType::Primary, EndpointType::Secondary}) {
      int pair = pair_index(i2, t2);
      if ((rs >> pair & 1) || hspace_.get_down(x, pair) != kNil) node_bits |= bit_of(pair);
    }
  }
  if (nodes_[x].rep != kNil) node_bits |= lf_.node(nodes_[x].rep).status;
  nodes_[x].is_node = node_bits;
}

void Hierarchy::rebuild_path(NodeId leaf) {
  std::vector<NodeId> path;
  for (NodeId cur = leaf; cur != kNil; cur = parent_of(cur)) path.push_back(cur);
  std::reverse(path.begin(), path.end());  // root .. leaf; path[k] has depth k
  for (NodeId x : path) rebuild_node_chains(x);
  // Cover the on-path chains, power by power. A link pair joins only when the
  // junction's level has the strictly smallest LSB index, and never across a
  // node that is itself an (i,t)-node for the pair.
  for (int p = 0; p + 1 < NodeShortcutState::kMaxPowers; ++p) {
    for (std::size_t k = 0; k < path.size(); ++k) {
      NodeId m = path[k];
      if (ShortcutSpace<Hierarchy>::lsb_index(level(m)) != p) continue;
      ShortcutId s1 = hspace_.up_by_power(m, p);
      if (s1 == kNil || hspace_.at(s1).membership == 0) continue;
      std::size_t k2 = k + (std::size_t{1} << p);
      if (k2 >= path.size()) continue;
      NodeId y = path[k2];
      ShortcutId s2 = hspace_.up_by_power(y, p);
      if (s2 == kNil || hspace_.at(s2).top != m || hspace_.at(s2).membership == 0) continue;
      NodeId a = hspace_.at(s1).top;
      if (ShortcutSpace<Hierarchy>::lsb_index(level(a)) <= p ||
          ShortcutSpace<Hierarchy>::lsb_index(level(y)) <= p)
        continue;
      PairSet shared =
          hspace_.at(s1).membership & hspace_.at(s2).membership & ~nodes_[m].is_node;
      if (!shared) continue;
      hspace_.cover_bulk(s1, s2, shared);
      ++stat_coverings;
    }
  }
  for (NodeId x : path) nodes_[x].torn = 0;
}

}  // namespace dynconn
