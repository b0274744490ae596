#include "dynconn/hierarchy.hpp"

#include <algorithm>

namespace dynconn {

namespace {
constexpr PairSet bit_of(int pair) { return PairSet{1} << pair; }

std::uint64_t top_capacity_default(std::uint32_t n) {
  return std::max<std::uint64_t>(4, 2 * static_cast<std::uint64_t>(floor_log2(n)));
}
std::uint64_t buffer_capacity_default(std::uint32_t n) {
  std::uint64_t lg = floor_log2(n);
  std::uint64_t cap = 1;
  for (int k = 0; k < 5; ++k) cap *= lg;  // (log2 n)^alpha, alpha = 5
  return std::max<std::uint64_t>(cap, 2);
}
}  // namespace

Hierarchy::Hierarchy(std::uint32_t n, const HierarchyConfig& cfg)
    : n_(n),
      layout_(CounterLayout::make(n)),
      lf_(layout_, cfg.buffer_capacity ? cfg.buffer_capacity : buffer_capacity_default(n),
          cfg.top_capacity ? cfg.top_capacity
                           : static_cast<std::uint32_t>(top_capacity_default(n))),
      hspace_(*this, layout_.dmax),
      store_(n),
      leaf_of_(n, kNil) {
  if (n < 2) raise(Errc::Contract, "hierarchy needs n >= 2");
  if (n > (1u << 21)) raise(Errc::Contract, "hierarchy supports n <= 2^21");
}

NodeId Hierarchy::alloc_node() {
  NodeId x;
  if (!node_free_.empty()) {
    x = node_free_.back();
    node_free_.pop_back();
    nodes_[x] = HierarchyNode{};
  } else {
    nodes_.push_back(HierarchyNode{});
    x = static_cast<NodeId>(nodes_.size() - 1);
  }
  return x;
}

void Hierarchy::free_node(NodeId x) {
  DYNCONN_ASSERT(!nodes_[x].shortcut_state || nodes_[x].shortcut_state->empty(),
                 "freeing hierarchy node with live shortcuts");
  nodes_[x] = HierarchyNode{};
  nodes_[x].freed = true;
  node_free_.push_back(x);
}

NodeId Hierarchy::ensure_leaf(VertexId v) {
  if (leaf_of_[v] != kNil) return leaf_of_[v];
  NodeId parent = kNil;
  for (int d = 0; d <= layout_.dmax; ++d) {
    NodeId x = alloc_node();
    HierarchyNode& nd = nodes_[x];
    nd.depth = static_cast<std::uint16_t>(d);
    nd.weight = 1;
    if (d < layout_.dmax)
      nd.ltree = std::make_unique<LocalForest::Tree>();
    else
      nd.vertex = v;
    if (parent != kNil) nd.rep = lf_.add_child(*nodes_[parent].ltree, parent, x, 1);
    parent = x;
  }
  leaf_of_[v] = parent;
  return parent;
}

NodeId Hierarchy::parent_of(NodeId x) const {
  if (nodes_[x].rep == kNil) return kNil;
  return lf_.owner_of(nodes_[x].rep);
}

NodeId Hierarchy::root_of(NodeId x) const {
  NodeId cur = x;
  while (nodes_[cur].rep != kNil) cur = lf_.owner_of(nodes_[cur].rep);
  return cur;
}

NodeId Hierarchy::ancestor_at_depth(NodeId x, int depth) const {
  NodeId cur = x;
  while (nodes_[cur].depth > depth) {
    cur = parent_of(cur);
    DYNCONN_ASSERT(cur != kNil, "ancestor walk fell off the root");
  }
  DYNCONN_ASSERT(nodes_[cur].depth == depth, "no ancestor at requested depth");
  return cur;
}

// ------------------------------------------------------------------- edges

EdgeId Hierarchy::find_edge(VertexId u, VertexId v) const {
  auto it = key2id_.find(EdgeKey(u, v).packed());
  return it == key2id_.end() ? kNil : it->second;
}

EdgeId Hierarchy::add_edge(VertexId u, VertexId v, int depth, EndpointType tu,
                           EndpointType tv) {
  if (u == v) raise(Errc::SelfLoop, "self loops are not allowed");
  if (u >= n_ || v >= n_) raise(Errc::Contract, "vertex out of range");
  EdgeKey key(u, v);
  if (key2id_.count(key.packed())) raise(Errc::DuplicateEdge, "edge already present");
  ensure_leaf(u);
  ensure_leaf(v);
  EdgeId e;
  if (!edge_free_.empty()) {
    e = edge_free_.back();
    edge_free_.pop_back();
  } else {
    edges_.push_back(EdgeRecord{});
    e = static_cast<EdgeId>(edges_.size() - 1);
  }
  EdgeRecord& r = edges_[e];
  r = EdgeRecord{};
  r.u = key.u;
  r.v = key.v;
  r.depth = static_cast<std::uint16_t>(depth);
  r.tu = key.u == u ? tu : tv;
  r.tv = key.u == u ? tv : tu;
  r.alive = true;
  key2id_[key.packed()] = e;

  for (auto [w, t] : {std::pair{r.u, r.tu}, std::pair{r.v, r.tv}}) {
    int pair = pair_index(depth, t);
    std::uint32_t slot = store_.insert(w, pair, e);
    (w == r.u ? r.slot_u : r.slot_v) = slot;
    NodeId leaf = leaf_of_[w];
    if (store_.size(w, pair) == 1) {
      set_leaf_status_bit(leaf, pair, true);
      itf_add_leaf(leaf, pair);
    }
    if (t == EndpointType::Primary) refresh_leaf_primary_counter(leaf, depth);
  }
  return e;
}

void Hierarchy::remove_edge(EdgeId e) {
  EdgeRecord& r = edges_[e];
  if (!r.alive) raise(Errc::MissingEdge, "edge not present");
  for (auto [w, t, slot] : {std::tuple{r.u, r.tu, r.slot_u}, std::tuple{r.v, r.tv, r.slot_v}}) {
    int pair = pair_index(r.depth, t);
    EdgeId moved = store_.remove(w, pair, slot);
    if (moved != kNil) (edges_[moved].u == w ? edges_[moved].slot_u : edges_[moved].slot_v) = slot;
    NodeId leaf = leaf_of_[w];
    if (store_.size(w, pair) == 0) {
      set_leaf_status_bit(leaf, pair, false);
      itf_remove_leaf(leaf, pair);
    }
    if (t == EndpointType::Primary) refresh_leaf_primary_counter(leaf, r.depth);
  }
  r.alive = false;
  key2id_.erase(EdgeKey(r.u, r.v).packed());
  edge_free_.push_back(e);
}

void Hierarchy::retag_endpoint(VertexId w, EdgeId e, int old_pair, int new_pair) {
  EdgeRecord& r = edges_[e];
  std::uint32_t slot = w == r.u ? r.slot_u : r.slot_v;
  EdgeId moved = store_.remove(w, old_pair, slot);
  if (moved != kNil) (edges_[moved].u == w ? edges_[moved].slot_u : edges_[moved].slot_v) = slot;
  NodeId leaf = leaf_of_[w];
  if (store_.size(w, old_pair) == 0) {
    set_leaf_status_bit(leaf, old_pair, false);
    itf_remove_leaf(leaf, old_pair);
  }
  if (pair_type(old_pair) == EndpointType::Primary)
    refresh_leaf_primary_counter(leaf, pair_depth(old_pair));

  std::uint32_t nslot = store_.insert(w, new_pair, e);
  (w == r.u ? r.slot_u : r.slot_v) = nslot;
  if (store_.size(w, new_pair) == 1) {
    set_leaf_status_bit(leaf, new_pair, true);
    itf_add_leaf(leaf, new_pair);
  }
  if (pair_type(new_pair) == EndpointType::Primary)
    refresh_leaf_primary_counter(leaf, pair_depth(new_pair));
}

void Hierarchy::convert_to_witness(EdgeId e) {
  EdgeRecord& r = edges_[e];
  if (r.tu == EndpointType::Witness) raise(Errc::Contract, "edge is already a witness");
  int d = r.depth;
  retag_endpoint(r.u, e, pair_index(d, r.tu), pair_index(d, EndpointType::Witness));
  retag_endpoint(r.v, e, pair_index(d, r.tv), pair_index(d, EndpointType::Witness));
  r.tu = r.tv = EndpointType::Witness;
}

void Hierarchy::promote_edge(EdgeId e, EndpointType new_type) {
  EdgeRecord& r = edges_[e];
  int d = r.depth;
  DYNCONN_ASSERT(d + 1 <= layout_.dmax, "promotion beyond d_max");
  retag_endpoint(r.u, e, pair_index(d, r.tu), pair_index(d + 1, new_type));
  retag_endpoint(r.v, e, pair_index(d, r.tv), pair_index(d + 1, new_type));
  r.tu = r.tv = new_type;
  r.depth = static_cast<std::uint16_t>(d + 1);
  ++r.promotions;
  ++stat_promotions;
}

void Hierarchy::set_leaf_status_bit(NodeId leaf, int pair, bool on) {
  if (on)
    nodes_[leaf].is_node |= bit_of(pair);
  else
    nodes_[leaf].is_node &= ~bit_of(pair);
}

// ---------------------------------------------------------------- counters

std::uint64_t Hierarchy::node_primary_value(NodeId x, int i) const {
  return CounterLayout::decode(nodes_[x].counters.get(layout_, i));
}

void Hierarchy::refresh_leaf_primary_counter(NodeId leaf, int i) {
  VertexId w = nodes_[leaf].vertex;
  std::uint64_t count = store_.size(w, pair_index(i, EndpointType::Primary));
  nodes_[leaf].counters.set(layout_, i, layout_.encode(count));
  update_counters_upward(leaf, i);
}

bool Hierarchy::in_it_forest(NodeId x, int pair) const {
  if (nodes_[x].is_node >> pair & 1) return true;
  if (hspace_.get_down(x, pair) != kNil) return true;
  if (nodes_[x].rep != kNil && (lf_.node(nodes_[x].rep).status >> pair & 1)) return true;
  return false;
}

// Recomputes approximate i-counters along the ancestor line of `from`. At a
// node whose local tree holds (i,primary)-marked heads the counter is the
// local fold; on bare chain interiors the child's value is copied through.
// The walk ends where the line leaves the (i,primary)-forest: values from a
// detached line must not overwrite a live ancestor.
void Hierarchy::update_counters_upward(NodeId from, int i) {
  int pair = pair_index(i, EndpointType::Primary);
  NodeId cur = from;
  while (nodes_[cur].depth > i) {
    NodeId p = parent_of(cur);
    if (p == kNil) break;
    LocalForest::Tree& t = *nodes_[p].ltree;
    if (lf_.node(nodes_[cur].rep).status >> pair & 1)
      lf_.leaf_set_counter(t, p, nodes_[cur].rep, i, node_primary_value(cur, i));
    if (lf_.root_status(t) >> pair & 1)
      nodes_[p].counters.set(layout_, i, lf_.root_counter(t, i));
    else if (in_it_forest(cur, pair))
      nodes_[p].counters.set(layout_, i, nodes_[cur].counters.get(layout_, i));
    else
      break;
    cur = p;
  }
}

std::uint64_t Hierarchy::primary_count(NodeId v, int i) const {
  int pair = pair_index(i, EndpointType::Primary);
  if (!(nodes_[v].is_node >> pair & 1)) return 0;
  return node_primary_value(v, i);
}

// Post-order exact rebuild of the (i,primary)-tree under v: leaves from store
// sizes, then folds/copies upward. Restores Invariant 2 with equality at the
// leaves.
void Hierarchy::rebuild_primary_counters(NodeId v, int i) {
  int pair = pair_index(i, EndpointType::Primary);
  if (!(nodes_[v].is_node >> pair & 1) &&
      !(nodes_[v].ltree && (lf_.root_status(*nodes_[v].ltree) >> pair & 1)))
    return;
  auto rec = [&](auto&& self, NodeId x) -> void {
    if (nodes_[x].depth == layout_.dmax) {
      std::uint64_t cnt = store_.size(nodes_[x].vertex, pair);
      nodes_[x].counters.set(layout_, i, layout_.encode(cnt));
      return;
    }
    std::vector<NodeId> kids = itf_children(x, pair);
    for (NodeId c : kids) {
      self(self, c);
      // refresh the chain interiors and the head snapshot up to x
      NodeId cur = c;
      while (cur != x) {
        NodeId p = parent_of(cur);
        LocalForest::Tree& t = *nodes_[p].ltree;
        if (lf_.node(nodes_[cur].rep).status >> pair & 1)
          lf_.leaf_set_counter(t, p, nodes_[cur].rep, i, node_primary_value(cur, i));
        if (p != x) {
          if (lf_.root_status(t) >> pair & 1)
            nodes_[p].counters.set(layout_, i, lf_.root_counter(t, i));
          else
            nodes_[p].counters.set(layout_, i, nodes_[cur].counters.get(layout_, i));
        }
        cur = p;
      }
    }
    LocalForest::Tree& t = *nodes_[x].ltree;
    if (lf_.root_status(t) >> pair & 1)
      nodes_[x].counters.set(layout_, i, lf_.root_counter(t, i));
    else if (!kids.empty())
      nodes_[x].counters.set(layout_, i, nodes_[kids[0]].counters.get(layout_, i));
    else
      nodes_[x].counters.set(layout_, i, ApproxCounter{});
  };
  rec(rec, v);
}

// ------------------------------------------------------ Lemma-2 operations

// Parked-regime recompute: with every chain below x parked as local marks,
// x's status bits and counters are fully determined by its local tree (plus
// its own rep marks for the case-4 bits).
void Hierarchy::derive_status_from_local(NodeId x) {
  LocalForest::Tree& t = *nodes_[x].ltree;
  PairSet rs = lf_.root_status(t);
  PairSet root_bits = 0, branch = 0;
  for (PairSet m = rs; m;) {
    int pair = __builtin_ctzll(m);
    m &= m - 1;
    if (pair_depth(pair) == nodes_[x].depth) root_bits |= PairSet{1} << pair;
    if (lf_.unique_status_leaf(t, pair) == kNil) branch |= PairSet{1} << pair;
  }
  PairSet keep_case4 = nodes_[x].rep != kNil ? lf_.node(nodes_[x].rep).status : 0;
  nodes_[x].is_node = root_bits | branch | keep_case4;
  nodes_[x].is_branching = branch;
  nodes_[x].counters.clear();
  for (PairSet m = rs; m;) {
    int pair = __builtin_ctzll(m);
    m &= m - 1;
    if (pair_type(pair) == EndpointType::Primary)
      nodes_[x].counters.set(layout_, pair_depth(pair), lf_.root_counter(t, pair_depth(pair)));
  }
}

// Re-aligns x's representative in its parent's local tree with x's actual
// content: weight, parked pair marks, and primary counter snapshots.
void Hierarchy::sync_rep_with_content(NodeId x) {
  if (nodes_[x].rep == kNil) return;
  NodeId p = lf_.owner_of(nodes_[x].rep);
  LocalForest::Tree& pt = *nodes_[p].ltree;
  lf_.leaf_set_weight(pt, p, nodes_[x].rep, nodes_[x].weight);
  // Pairs rooted at x stay below x; only deeper pairs' chains cross the edge
  // to the parent and may park at x's representative.
  PairSet own_depth = 0;
  for (auto t2 : {EndpointType::Witness, EndpointType::Primary, EndpointType::Secondary})
    if (nodes_[x].depth >= 1 && nodes_[x].depth <= layout_.dmax)
      own_depth |= pair_bit(nodes_[x].depth, t2);
  PairSet want = lf_.root_status(*nodes_[x].ltree) & ~own_depth;
  PairSet have = lf_.node(nodes_[x].rep).status;
  for (PairSet m = have & ~want; m;) {
    int pair = __builtin_ctzll(m);
    m &= m - 1;
    lf_.leaf_remove_status(pt, p, nodes_[x].rep, pair);
  }
  for (PairSet m = want & ~have; m;) {
    int pair = __builtin_ctzll(m);
    m &= m - 1;
    std::uint64_t cnt = pair_type(pair) == EndpointType::Primary
                            ? node_primary_value(x, pair_depth(pair))
                            : 0;
    lf_.leaf_add_status(pt, p, nodes_[x].rep, pair, cnt);
  }
  for (PairSet m = want & have; m;) {
    int pair = __builtin_ctzll(m);
    m &= m - 1;
    if (pair_type(pair) == EndpointType::Primary)
      lf_.leaf_set_counter(pt, p, nodes_[x].rep, pair_depth(pair),
                           node_primary_value(x, pair_depth(pair)));
  }
}

NodeId Hierarchy::merge_promote(const std::vector<NodeId>& members) {
  DYNCONN_ASSERT(!members.empty(), "merge of an empty set");
  NodeId survivor = members.front();
  int depth = nodes_[survivor].depth;
  int i = depth;  // witness edges at depth i connect depth-i nodes
  NodeId parent = parent_of(survivor);
  for (NodeId m : members)
    DYNCONN_ASSERT(parent_of(m) == parent && nodes_[m].depth == depth,
                   "merge members must be siblings (or all roots)");

  if (members.size() > 1) {
    uncover_node(survivor);
    std::uint64_t weight = nodes_[survivor].weight;
    for (std::size_t k = 1; k < members.size(); ++k) {
      NodeId m = members[k];
      uncover_node(m);
      if (parent != kNil) lf_.delete_child(*nodes_[parent].ltree, parent, nodes_[m].rep);
      lf_.merge(*nodes_[survivor].ltree, survivor, *nodes_[m].ltree);
      weight += nodes_[m].weight;
      nodes_[m].ltree.reset();
      free_node(m);
    }
    nodes_[survivor].weight = static_cast<std::uint32_t>(weight);
  }
  if (nodes_[survivor].ltree) {
    derive_status_from_local(survivor);
    sync_rep_with_content(survivor);
    if (!nodes_[survivor].torn && members.size() > 1) rebuild_node_chains(survivor);
  }

  // Promote every i-witness edge touching the merged node.
  if (i >= 1 && i < layout_.dmax) {
    int pw = pair_index(i, EndpointType::Witness);
    std::vector<EdgeId> witness_edges;
    std::uint64_t epoch = new_epoch();
    (void)epoch;
    enumerate_endpoints(survivor, pw, [&](VertexId, EdgeId e) {
      if (!edges_[e].alive) return;
      if (std::find(witness_edges.begin(), witness_edges.end(), e) == witness_edges.end())
        witness_edges.push_back(e);
    });
    for (EdgeId e : witness_edges) promote_edge(e, EndpointType::Witness);
  }
  return survivor;
}

void Hierarchy::upgrade_secondary(NodeId v, int i) {
  int ps = pair_index(i, EndpointType::Secondary);
  int pp = pair_index(i, EndpointType::Primary);
  std::vector<std::pair<VertexId, EdgeId>> secs;
  enumerate_endpoints(v, ps, [&](VertexId w, EdgeId e) { secs.emplace_back(w, e); });
  for (auto [w, e] : secs) {
    if (!edges_[e].alive) continue;
    EdgeRecord& r = edges_[e];
    EndpointType& t = (w == r.u) ? r.tu : r.tv;
    if (t != EndpointType::Secondary || r.depth != i) continue;
    retag_endpoint(w, e, ps, pp);
    t = EndpointType::Primary;
    ++r.upgrades;
    ++stat_upgrades;
  }
  rebuild_primary_counters(v, i);
}

void Hierarchy::promote_primary(NodeId v, int i, const std::vector<EdgeId>& list) {
  for (EdgeId e : list) {
    EdgeRecord& r = edges_[e];
    DYNCONN_ASSERT(r.alive && r.depth == i && r.tu == EndpointType::Primary &&
                       r.tv == EndpointType::Primary,
                   "promote_primary expects live i-primary/primary edges");
    promote_edge(e, EndpointType::Secondary);
  }
  rebuild_primary_counters(v, i);
}

std::pair<NodeId, NodeId> Hierarchy::split(NodeId parent, NodeId child,
                                           std::uint8_t child_torn) {
  DYNCONN_ASSERT(parent_of(child) == parent, "split child mismatch");
  DYNCONN_ASSERT(nodes_[parent].torn, "split outside a torn bracket");
  NodeId nu = alloc_node();
  nodes_[nu].depth = nodes_[parent].depth;
  nodes_[nu].weight = nodes_[child].weight;
  nodes_[nu].ltree = std::make_unique<LocalForest::Tree>();
  nodes_[nu].torn = child_torn;
  nodes_[parent].torn &= static_cast<std::uint8_t>(~child_torn);

  PairSet bits_child = lf_.node(nodes_[child].rep).status;
  lf_.delete_child(*nodes_[parent].ltree, parent, nodes_[child].rep);
  nodes_[parent].weight -= nodes_[child].weight;

  nodes_[child].rep = lf_.add_child(*nodes_[nu].ltree, nu, child, nodes_[child].weight);
  for (PairSet m = bits_child; m;) {
    int pair = __builtin_ctzll(m);
    m &= m - 1;
    std::uint64_t cnt = pair_type(pair) == EndpointType::Primary
                            ? node_primary_value(child, pair_depth(pair))
                            : 0;
    lf_.leaf_add_status(*nodes_[nu].ltree, nu, nodes_[child].rep, pair, cnt);
  }
  derive_status_from_local(nu);
  derive_status_from_local(parent);

  NodeId gp = parent_of(parent);
  if (gp != kNil)
    nodes_[nu].rep = lf_.add_child(*nodes_[gp].ltree, gp, nu, nodes_[nu].weight);
  sync_rep_with_content(nu);
  sync_rep_with_content(parent);
  return {nu, parent};
}

void Hierarchy::enumerate_endpoints(NodeId v, int pair,
                                    const std::function<void(VertexId, EdgeId)>& f) {
  EndpointWalk walk(*this, v, pair);
  VertexId w;
  EdgeId e;
  while (walk.next(w, e)) f(w, e);
}

Hierarchy::EndpointWalk::EndpointWalk(Hierarchy& h, NodeId v, int pair) : h_(h), pair_(pair) {
  bool rooted = (h_.nodes_[v].is_node >> pair & 1) != 0;
  if (!rooted && h_.nodes_[v].ltree)
    rooted = (h_.lf_.root_status(*h_.nodes_[v].ltree) >> pair & 1) != 0;
  if (rooted) stack_.push_back(v);
}

bool Hierarchy::EndpointWalk::next(VertexId& w, EdgeId& e) {
  for (;;) {
    if (idx_ < current_.size()) {
      w = current_vertex_;
      e = current_[idx_++];
      return true;
    }
    current_.clear();
    idx_ = 0;
    if (stack_.empty()) return false;
    NodeId x = stack_.back();
    stack_.pop_back();
    if (h_.nodes_[x].depth == h_.layout_.dmax) {
      auto span = h_.store_.enumerate(h_.nodes_[x].vertex, pair_);
      current_.assign(span.begin(), span.end());
      current_vertex_ = h_.nodes_[x].vertex;
      continue;
    }
    std::vector<NodeId> kids = h_.itf_children(x, pair_);
    for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack_.push_back(*it);
  }
}

}  // namespace dynconn
