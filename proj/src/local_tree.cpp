#include "dynconn/local_tree.hpp"

#include <algorithm>
#include <set>

namespace dynconn {

namespace {
constexpr PairSet bit_of(int pair) { return PairSet{1} << pair; }
}  // namespace

LocalId LocalForest::alloc(LKind kind) {
  LocalId id;
  if (!free_.empty()) {
    id = free_.back();
    free_.pop_back();
    std::uint16_t gen = nodes_[id].gen;
    nodes_[id] = LocalNode{};
    nodes_[id].gen = static_cast<std::uint16_t>(gen + 1);
  } else {
    nodes_.push_back(LocalNode{});
    id = static_cast<LocalId>(nodes_.size() - 1);
  }
  nodes_[id].kind = kind;
  return id;
}

void LocalForest::free_node(LocalId id) {
  DYNCONN_ASSERT(!nodes_[id].shortcut_state || nodes_[id].shortcut_state->empty(),
                 "freeing local node with live shortcuts");
  std::uint16_t gen = nodes_[id].gen;
  nodes_[id] = LocalNode{};
  nodes_[id].gen = gen;
  nodes_[id].freed = true;
  free_.push_back(id);
}

void LocalForest::recompute(LocalId id) {
  LocalNode& n = nodes_[id];
  LocalId l = n.left, r = n.right;
  if (r == kNil) {  // unary bottom root
    n.weight = nodes_[l].weight;
    n.status = nodes_[l].status;
    n.counters = nodes_[l].counters.clone(layout_);
    return;
  }
  n.weight = nodes_[l].weight + nodes_[r].weight;
  n.status = nodes_[l].status | nodes_[r].status;
  n.counters = nodes_[l].counters.clone(layout_);
  n.counters.add_from(layout_, nodes_[r].counters);
}

LocalId LocalForest::sibling_of(LocalId id) const {
  const LocalNode& p = nodes_[nodes_[id].parent];
  return p.left == id ? p.right : p.left;
}

void LocalForest::replace_child(LocalId parent, LocalId was, LocalId now) {
  LocalNode& p = nodes_[parent];
  if (p.left == was)
    p.left = now;
  else {
    DYNCONN_ASSERT(p.right == was, "replace_child: not a child");
    p.right = now;
  }
  nodes_[now].parent = parent;
}

// ---------------------------------------------------------------- buffer AVL

void LocalForest::update_height(LocalId id) {
  nodes_[id].height = static_cast<std::uint8_t>(1 + std::max(h(nodes_[id].left), h(nodes_[id].right)));
}

LocalId LocalForest::rotate(LocalId z) {
  // Returns the subtree's new root; parent link of the result is preserved.
  LocalNode& zn = nodes_[z];
  int bal = h(zn.left) - h(zn.right);
  if (bal > 1) {
    LocalId y = zn.left;
    if (h(nodes_[y].left) < h(nodes_[y].right)) {
      // left-right: rotate y left first
      LocalId x = nodes_[y].right;
      nodes_[y].right = nodes_[x].left;
      if (nodes_[x].left != kNil) nodes_[nodes_[x].left].parent = y;
      nodes_[x].left = y;
      nodes_[y].parent = x;
      nodes_[z].left = x;
      nodes_[x].parent = z;
      recompute(y);
      update_height(y);
      y = x;
    }
    LocalId par = zn.parent;
    nodes_[z].left = nodes_[y].right;
    if (nodes_[y].right != kNil) nodes_[nodes_[y].right].parent = z;
    nodes_[y].right = z;
    nodes_[z].parent = y;
    nodes_[y].parent = par;
    recompute(z);
    update_height(z);
    recompute(y);
    update_height(y);
    return y;
  }
  if (bal < -1) {
    LocalId y = zn.right;
    if (h(nodes_[y].right) < h(nodes_[y].left)) {
      LocalId x = nodes_[y].left;
      nodes_[y].left = nodes_[x].right;
      if (nodes_[x].right != kNil) nodes_[nodes_[x].right].parent = y;
      nodes_[x].right = y;
      nodes_[y].parent = x;
      nodes_[z].right = x;
      nodes_[x].parent = z;
      recompute(y);
      update_height(y);
      y = x;
    }
    LocalId par = zn.parent;
    nodes_[z].right = nodes_[y].left;
    if (nodes_[y].left != kNil) nodes_[nodes_[y].left].parent = z;
    nodes_[y].left = z;
    nodes_[z].parent = y;
    nodes_[y].parent = par;
    recompute(z);
    update_height(z);
    recompute(y);
    update_height(y);
    return y;
  }
  return z;
}

LocalId LocalForest::rebalance_up(LocalId from) {
  LocalId x = from, top = from;
  while (x != kNil) {
    if (nodes_[x].kind == LKind::Buffer) {
      recompute(x);
      update_height(x);
      LocalId par = nodes_[x].parent;
      LocalId nx = rotate(x);
      if (nx != x && par != kNil) replace_child(par, x, nx);
      x = nx;
    }
    top = x;
    x = nodes_[x].parent;
  }
  return top;
}

void LocalForest::buffer_insert(Tree& t, NodeId owner, LocalId leaf) {
  nodes_[leaf].parent = kNil;
  if (t.buffer_root == kNil) {
    t.buffer_root = leaf;
  } else {
    LocalId cur = t.buffer_root;
    while (nodes_[cur].kind == LKind::Buffer)
      cur = h(nodes_[cur].left) <= h(nodes_[cur].right) ? nodes_[cur].left : nodes_[cur].right;
    LocalId p = alloc(LKind::Buffer);
    LocalId gp = nodes_[cur].parent;
    nodes_[p].left = cur;
    nodes_[p].right = leaf;
    nodes_[cur].parent = p;
    nodes_[leaf].parent = p;
    if (gp == kNil) {
      nodes_[p].parent = kNil;
      t.buffer_root = rebalance_up(p);
    } else {
      nodes_[p].parent = gp;
      replace_child(gp, cur, p);
      nodes_[p].parent = gp;
      t.buffer_root = rebalance_up(p);
    }
  }
  ++t.buffer_leaves;
  set_top_markers(t, owner);
}

void LocalForest::buffer_delete(Tree& t, NodeId owner, LocalId leaf) {
  LocalId p = nodes_[leaf].parent;
  if (p == kNil) {
    DYNCONN_ASSERT(t.buffer_root == leaf, "buffer_delete: stray leaf");
    t.buffer_root = kNil;
  } else {
    LocalId s = sibling_of(leaf);
    LocalId g = nodes_[p].parent;
    if (g == kNil) {
      t.buffer_root = s;
      nodes_[s].parent = kNil;
    } else {
      replace_child(g, p, s);
    }
    free_node(p);
    if (g != kNil) t.buffer_root = rebalance_up(g);
  }
  nodes_[leaf].parent = kNil;
  --t.buffer_leaves;
  set_top_markers(t, owner);
}

LocalId LocalForest::avl_join(LocalId a, LocalId b) {
  if (a == kNil) return b;
  if (b == kNil) return a;
  int ha = h(a), hb = h(b);
  if (ha <= hb + 1 && hb <= ha + 1) {
    LocalId n = alloc(LKind::Buffer);
    nodes_[n].left = a;
    nodes_[n].right = b;
    nodes_[a].parent = n;
    nodes_[b].parent = n;
    recompute(n);
    update_height(n);
    return n;
  }
  if (ha > hb) {
    LocalId x = a;
    while (h(x) > hb + 1) x = nodes_[x].right;
    LocalId par = nodes_[x].parent;
    DYNCONN_ASSERT(par != kNil, "avl_join spine walk");
    LocalId n = alloc(LKind::Buffer);
    nodes_[n].left = x;
    nodes_[n].right = b;
    nodes_[x].parent = n;
    nodes_[b].parent = n;
    recompute(n);
    update_height(n);
    replace_child(par, x, n);
    return rebalance_up(par);
  }
  LocalId x = b;
  while (h(x) > ha + 1) x = nodes_[x].left;
  LocalId par = nodes_[x].parent;
  DYNCONN_ASSERT(par != kNil, "avl_join spine walk");
  LocalId n = alloc(LKind::Buffer);
  nodes_[n].left = a;
  nodes_[n].right = x;
  nodes_[a].parent = n;
  nodes_[x].parent = n;
  recompute(n);
  update_height(n);
  replace_child(par, x, n);
  return rebalance_up(par);
}

// ----------------------------------------------------------- layer plumbing

bool LocalForest::in_buffer(LocalId leaf) const {
  LocalId p = nodes_[leaf].parent;
  if (p == kNil) return true;  // single-leaf buffer
  return nodes_[p].kind == LKind::Buffer;
}

LocalId LocalForest::bottom_root_of(LocalId leaf) const {
  LocalId x = leaf;
  while (nodes_[x].parent != kNil && nodes_[nodes_[x].parent].kind == LKind::Bottom)
    x = nodes_[x].parent;
  DYNCONN_ASSERT(nodes_[x].kind == LKind::Bottom, "leaf not in a bottom tree");
  return x;
}

NodeId LocalForest::owner_of(LocalId id) const {
  LocalId x = id;
  while (nodes_[x].parent != kNil) x = nodes_[x].parent;
  DYNCONN_ASSERT(nodes_[x].owner != kNil, "tree top without owner");
  return nodes_[x].owner;
}

int LocalForest::hops_to_top(LocalId leaf) const {
  int hops = 0;
  for (LocalId x = leaf; nodes_[x].parent != kNil; x = nodes_[x].parent) ++hops;
  return hops;
}

void LocalForest::set_top_markers(Tree& t, NodeId owner) {
  if (t.buffer_root != kNil) {
    nodes_[t.buffer_root].parent = kNil;
    nodes_[t.buffer_root].owner = owner;
  }
  if (t.top_root != kNil) {
    nodes_[t.top_root].parent = kNil;
    nodes_[t.top_root].owner = owner;
  }
}

void LocalForest::maybe_convert_buffer(Tree& t, NodeId owner) {
  if (buffer_capacity_ == 0 || t.buffer_leaves < buffer_capacity_) return;
  convert_buffer_to_bottom(t, owner);
}

LocalId LocalForest::build_balanced(const std::vector<LocalId>& leaves, std::size_t lo,
                                    std::size_t hi, LKind kind) {
  if (hi - lo == 1) return leaves[lo];
  std::size_t mid = lo + (hi - lo) / 2;
  LocalId l = build_balanced(leaves, lo, mid, kind);
  LocalId r = build_balanced(leaves, mid, hi, kind);
  LocalId n = alloc(kind);
  nodes_[n].left = l;
  nodes_[n].right = r;
  nodes_[l].parent = n;
  nodes_[r].parent = n;
  recompute(n);
  nodes_[n].height = static_cast<std::uint8_t>(
      1 + std::max(nodes_[l].kind == LKind::Leaf ? 0 : nodes_[l].height,
                   nodes_[r].kind == LKind::Leaf ? 0 : nodes_[r].height));
  return n;
}

void LocalForest::convert_buffer_to_bottom(Tree& t, NodeId owner) {
  if (t.buffer_root == kNil) return;
  std::vector<LocalId> leaves;
  std::vector<LocalId> stack{t.buffer_root};
  while (!stack.empty()) {
    LocalId x = stack.back();
    stack.pop_back();
    if (nodes_[x].kind == LKind::Leaf) {
      leaves.push_back(x);
      continue;
    }
    stack.push_back(nodes_[x].right);
    stack.push_back(nodes_[x].left);
    free_node(x);
  }
  t.buffer_root = kNil;
  t.buffer_leaves = 0;
  LocalId rb = build_balanced(leaves, 0, leaves.size(), LKind::Bottom);
  if (nodes_[rb].kind == LKind::Leaf) {  // single leaf: unary bottom root
    LocalId root = alloc(LKind::Bottom);
    nodes_[root].left = rb;
    nodes_[root].right = kNil;
    nodes_[rb].parent = root;
    recompute(root);
    rb = root;
  }
  nodes_[rb].parent = kNil;
  DYNCONN_ASSERT(nodes_[rb].weight > 0, "empty bottom tree");
  nodes_[rb].rank = static_cast<std::int16_t>(floor_log2(nodes_[rb].weight));
  t.middle_roots.push_back(rb);
  rebuild_top(t, owner);
  maybe_join_middles(t, owner);
}

void LocalForest::free_top_internals(Tree& t) {
  if (t.top_root == kNil) return;
  std::vector<LocalId> stack{t.top_root};
  while (!stack.empty()) {
    LocalId x = stack.back();
    stack.pop_back();
    if (nodes_[x].freed) continue;
    if (nodes_[x].kind != LKind::Top) {
      nodes_[x].parent = kNil;
      continue;
    }
    stack.push_back(nodes_[x].left);
    stack.push_back(nodes_[x].right);
    free_node(x);
  }
  t.top_root = kNil;
}

void LocalForest::rebuild_top(Tree& t, NodeId owner) {
  free_top_internals(t);
  if (t.middle_roots.empty()) {
    t.top_root = kNil;
  } else {
    t.top_root = build_balanced(t.middle_roots, 0, t.middle_roots.size(), LKind::Top);
    nodes_[t.top_root].parent = kNil;
  }
  set_top_markers(t, owner);
}

void LocalForest::maybe_join_middles(Tree& t, NodeId owner) {
  if (t.middle_roots.size() < top_capacity_) return;
  free_top_internals(t);  // joining rewires parents; the old top is dead
  // Pair equal-rank roots, lowest rank first, until ranks are distinct.
  // Ranks never exceed log2 of the total weight, so 66 buckets suffice.
  std::vector<std::vector<LocalId>> buckets(66);
  for (LocalId r : t.middle_roots) {
    std::size_t k = static_cast<std::size_t>(nodes_[r].rank);
    DYNCONN_ASSERT(k + 1 < buckets.size(), "rank out of range");
    buckets[k].push_back(r);
  }
  t.middle_roots.clear();
  for (std::size_t k = 0; k + 1 < buckets.size(); ++k) {
    auto& b = buckets[k];
    std::size_t i = 0;
    while (i + 1 < b.size()) {
      LocalId r1 = b[i], r2 = b[i + 1];
      i += 2;
      LocalId m = alloc(LKind::Middle);
      nodes_[m].rank = static_cast<std::int16_t>(k + 1);
      nodes_[m].left = r1;
      nodes_[m].right = r2;
      nodes_[r1].parent = m;
      nodes_[r2].parent = m;
      recompute(m);
      // Invariant 5: a trivial shortcut for every pair present on one side.
      PairSet only_left = nodes_[r1].status & ~nodes_[r2].status;
      PairSet only_right = nodes_[r2].status & ~nodes_[r1].status;
      if (only_left) {
        ShortcutId s = mspace_.get_or_create(m, r1);
        mspace_.add_membership(s, only_left);
      }
      if (only_right) {
        ShortcutId s = mspace_.get_or_create(m, r2);
        mspace_.add_membership(s, only_right);
      }
      buckets[k + 1].push_back(m);
    }
    if (i < b.size()) t.middle_roots.push_back(b[i]);
  }
  rebuild_top(t, owner);
}

// ------------------------------------------------------------ child add/del

LocalId LocalForest::add_child(Tree& t, NodeId owner, NodeId child, std::uint64_t weight) {
  LocalId leaf = alloc(LKind::Leaf);
  nodes_[leaf].child = child;
  nodes_[leaf].weight = weight;
  buffer_insert(t, owner, leaf);
  maybe_convert_buffer(t, owner);
  return leaf;
}

void LocalForest::delete_child(Tree& t, NodeId owner, LocalId leaf) {
  if (in_buffer(leaf)) {
    buffer_delete(t, owner, leaf);
  } else {
    delete_bottom_leaf(t, owner, leaf);
  }
  free_node(leaf);
}

void LocalForest::delete_bottom_leaf(Tree& t, NodeId owner, LocalId leaf) {
  LocalId rb = bottom_root_of(leaf);
  LocalId p = nodes_[leaf].parent;
  DYNCONN_ASSERT(p != kNil, "bottom leaf without parent");
  if (p == rb && (sibling_of(leaf) == kNil)) {
    // Last leaf: the whole bottom tree (and its middle path) goes away.
    remove_middle_path(t, owner, rb);
    auto it = std::find(t.middle_roots.begin(), t.middle_roots.end(), rb);
    DYNCONN_ASSERT(it != t.middle_roots.end(), "bottom root not registered");
    t.middle_roots.erase(it);
    nodes_[leaf].parent = kNil;
    free_node(rb);
    rebuild_top(t, owner);
    maybe_join_middles(t, owner);
    return;
  }
  PairSet before = nodes_[rb].status;
  LocalId start;
  if (p == rb) {
    LocalId s = sibling_of(leaf);
    if (nodes_[s].kind == LKind::Bottom) {
      // Splice s's children into the root so the root keeps its identity.
      nodes_[rb].left = nodes_[s].left;
      nodes_[rb].right = nodes_[s].right;
      nodes_[nodes_[s].left].parent = rb;
      if (nodes_[s].right != kNil) nodes_[nodes_[s].right].parent = rb;
      free_node(s);
    } else {
      nodes_[rb].left = s;
      nodes_[rb].right = kNil;
      nodes_[s].parent = rb;
    }
    start = rb;
  } else {
    LocalId s = sibling_of(leaf);
    LocalId g = nodes_[p].parent;
    replace_child(g, p, s);
    free_node(p);
    start = g;
  }
  nodes_[leaf].parent = kNil;
  for (LocalId x = start;; x = nodes_[x].parent) {
    recompute(x);
    if (x == rb) break;
  }
  propagate_above_bottom(t, owner, rb, before, /*rank_may_drop=*/true);
}

// Moves a bottom leaf into the buffer. Deliberately does NOT run the
// buffer-capacity conversion: callers mutate the leaf first (status bit,
// counter, weight) and convert afterwards, so a freshly built bottom tree
// already carries the new value instead of gaining it later.
void LocalForest::relocate_to_buffer(Tree& t, NodeId owner, LocalId leaf) {
  if (in_buffer(leaf)) return;
  delete_bottom_leaf(t, owner, leaf);
  buffer_insert(t, owner, leaf);
}

void LocalForest::propagate_above_bottom(Tree& t, NodeId owner, LocalId rb, PairSet before,
                                         bool rank_may_drop) {
  if (rank_may_drop) {
    DYNCONN_ASSERT(nodes_[rb].weight > 0, "empty bottom root survived");
    int new_rank = floor_log2(nodes_[rb].weight);
    if (new_rank < nodes_[rb].rank) {
      remove_middle_path(t, owner, rb);
      nodes_[rb].rank = static_cast<std::int16_t>(new_rank);
      rebuild_top(t, owner);
      maybe_join_middles(t, owner);
      return;
    }
  }
  PairSet lost = before & ~nodes_[rb].status;
  for (PairSet m = lost; m;) {
    int pair = __builtin_ctzll(m);
    m &= m - 1;
    middle_remove_status(rb, pair);
  }
  refresh_to_top(t, owner, rb);
}

void LocalForest::middle_remove_status(LocalId rb, int pair) {
  // Clear the stored chain ending at rb, then repair at the branching parent.
  LocalId cur = rb;
  for (;;) {
    ShortcutId s = mspace_.get_up(cur, pair);
    if (s == kNil) break;
    LocalId top = mspace_.at(s).top;
    mspace_.remove_membership(s, bit_of(pair));
    cur = top;
  }
  LocalId p = nodes_[cur].parent;
  if (p == kNil || nodes_[p].kind != LKind::Middle) return;
  LocalId other = nodes_[p].left == cur ? nodes_[p].right : nodes_[p].left;
  if (nodes_[other].status >> pair & 1) {
    // p stops branching for this pair; the edge to the survivor becomes a
    // trivial shortcut so the chain through p stays connected.
    ShortcutId s = mspace_.get_or_create(p, other);
    mspace_.add_membership(s, bit_of(pair));
  }
}

void LocalForest::remove_middle_path(Tree& t, NodeId owner, LocalId rb) {
  (void)owner;
  std::vector<LocalId> path;
  for (LocalId x = nodes_[rb].parent; x != kNil && nodes_[x].kind == LKind::Middle;
       x = nodes_[x].parent)
    path.push_back(x);
  if (path.empty()) {
    // rb is already a middle root; detach from top internals only.
    return;
  }
  LocalId old_root = path.back();
  // Dismantle every local shortcut leaving a path node, top-down,
  // largest power first; trivial bits on dying edges are dropped.
  for (std::size_t i = path.size(); i-- > 0;) {
    LocalId x = path[i];
    for (;;) {
      ShortcutId best = kNil;
      int bp = 0;
      mspace_.for_each_down(x, [&](ShortcutId s) {
        if (mspace_.at(s).power > bp) {
          bp = mspace_.at(s).power;
          best = s;
        }
      });
      if (best == kNil) break;
      PairSet m = mspace_.at(best).membership;
      for (PairSet b = m; b;) {
        int pair = __builtin_ctzll(b);
        b &= b - 1;
        mspace_.uncover(best, pair);
      }
    }
    mspace_.for_each_down(x, [&](ShortcutId s) {
      mspace_.remove_membership(s, mspace_.at(s).membership);
    });
  }
  // Detach the off-path child of every path node; they become middle roots.
  auto it = std::find(t.middle_roots.begin(), t.middle_roots.end(), old_root);
  DYNCONN_ASSERT(it != t.middle_roots.end(), "middle root not registered");
  t.middle_roots.erase(it);
  for (std::size_t i = path.size(); i-- > 0;) {
    LocalId x = path[i];
    LocalId on_path = (i == 0) ? rb : path[i - 1];
    LocalId off = nodes_[x].left == on_path ? nodes_[x].right : nodes_[x].left;
    DYNCONN_ASSERT(off != kNil, "unary middle node");
    nodes_[off].parent = kNil;
    t.middle_roots.push_back(off);
  }
  nodes_[rb].parent = kNil;
  t.middle_roots.push_back(rb);
  for (LocalId x : path) free_node(x);
}

void LocalForest::refresh_to_top(Tree& t, NodeId owner, LocalId from) {
  for (LocalId x = nodes_[from].parent; x != kNil; x = nodes_[x].parent) recompute(x);
  set_top_markers(t, owner);
}

// ---------------------------------------------------------------- merge

void LocalForest::merge(Tree& dst, NodeId owner, Tree& src) {
  dst.buffer_root = avl_join(dst.buffer_root, src.buffer_root);
  dst.buffer_leaves += src.buffer_leaves;
  free_top_internals(src);
  for (LocalId r : src.middle_roots) {
    nodes_[r].parent = kNil;
    dst.middle_roots.push_back(r);
  }
  src = Tree{};
  maybe_convert_buffer(dst, owner);
  rebuild_top(dst, owner);
  maybe_join_middles(dst, owner);
}

// ------------------------------------------------------------- leaf state

void LocalForest::leaf_add_status(Tree& t, NodeId owner, LocalId leaf, int pair,
                                  std::uint64_t primary_count) {
  if (nodes_[leaf].status >> pair & 1) return;  // idempotent
  if (!in_buffer(leaf)) relocate_to_buffer(t, owner, leaf);
  nodes_[leaf].status |= bit_of(pair);
  if (pair_type(pair) == EndpointType::Primary)
    nodes_[leaf].counters.set(layout_, pair_depth(pair), layout_.encode(primary_count));
  for (LocalId x = nodes_[leaf].parent; x != kNil; x = nodes_[x].parent) recompute(x);
  set_top_markers(t, owner);
  maybe_convert_buffer(t, owner);
}

void LocalForest::leaf_remove_status(Tree& t, NodeId owner, LocalId leaf, int pair) {
  if (!(nodes_[leaf].status >> pair & 1))
    raise(Errc::Contract, "removing absent local status");
  nodes_[leaf].status &= ~bit_of(pair);
  if (pair_type(pair) == EndpointType::Primary)
    nodes_[leaf].counters.set(layout_, pair_depth(pair), ApproxCounter{});
  if (in_buffer(leaf)) {
    for (LocalId x = nodes_[leaf].parent; x != kNil; x = nodes_[x].parent) recompute(x);
    set_top_markers(t, owner);
    return;
  }
  LocalId rb = bottom_root_of(leaf);
  PairSet before = nodes_[rb].status;
  for (LocalId x = nodes_[leaf].parent;; x = nodes_[x].parent) {
    recompute(x);
    if (x == rb) break;
  }
  propagate_above_bottom(t, owner, rb, before, /*rank_may_drop=*/false);
}

void LocalForest::leaf_set_counter(Tree& t, NodeId owner, LocalId leaf, int depth,
                                   std::uint64_t value) {
  int pair = pair_index(depth, EndpointType::Primary);
  DYNCONN_ASSERT(nodes_[leaf].status >> pair & 1, "counter on unmarked leaf");
  ApproxCounter neu = layout_.encode(value);
  ApproxCounter old = nodes_[leaf].counters.get(layout_, depth);
  if (neu == old) return;
  bool increase = CounterLayout::decode(neu) > CounterLayout::decode(old);
  if (increase && !in_buffer(leaf)) relocate_to_buffer(t, owner, leaf);
  nodes_[leaf].counters.set(layout_, depth, neu);
  if (in_buffer(leaf)) {
    for (LocalId x = nodes_[leaf].parent; x != kNil; x = nodes_[x].parent) recompute(x);
    set_top_markers(t, owner);
    maybe_convert_buffer(t, owner);
    return;
  }
  LocalId rb = bottom_root_of(leaf);
  PairSet before = nodes_[rb].status;
  for (LocalId x = nodes_[leaf].parent;; x = nodes_[x].parent) {
    recompute(x);
    if (x == rb) break;
  }
  propagate_above_bottom(t, owner, rb, before, /*rank_may_drop=*/false);
}

void LocalForest::leaf_set_weight(Tree& t, NodeId owner, LocalId leaf, std::uint64_t weight) {
  if (nodes_[leaf].weight == weight) return;
  bool increase = weight > nodes_[leaf].weight;
  if (increase && !in_buffer(leaf)) relocate_to_buffer(t, owner, leaf);
  nodes_[leaf].weight = weight;
  if (in_buffer(leaf)) {
    for (LocalId x = nodes_[leaf].parent; x != kNil; x = nodes_[x].parent) recompute(x);
    set_top_markers(t, owner);
    maybe_convert_buffer(t, owner);
    return;
  }
  LocalId rb = bottom_root_of(leaf);
  PairSet before = nodes_[rb].status;
  for (LocalId x = nodes_[leaf].parent;; x = nodes_[x].parent) {
    recompute(x);
    if (x == rb) break;
  }
  propagate_above_bottom(t, owner, rb, before, /*rank_may_drop=*/true);
}

// ---------------------------------------------------------------- queries

PairSet LocalForest::root_status(const Tree& t) const {
  PairSet s = 0;
  if (t.buffer_root != kNil) s |= nodes_[t.buffer_root].status;
  if (t.top_root != kNil) s |= nodes_[t.top_root].status;
  return s;
}

std::uint64_t LocalForest::root_weight(const Tree& t) const {
  std::uint64_t w = 0;
  if (t.buffer_root != kNil) w += nodes_[t.buffer_root].weight;
  if (t.top_root != kNil) w += nodes_[t.top_root].weight;
  return w;
}

ApproxCounter LocalForest::root_counter(const Tree& t, int depth) const {
  ApproxCounter a, b;
  if (t.buffer_root != kNil) a = nodes_[t.buffer_root].counters.get(layout_, depth);
  if (t.top_root != kNil) b = nodes_[t.top_root].counters.get(layout_, depth);
  return layout_.boxplus(a, b);
}

void LocalForest::enumerate_status(const Tree& t, int pair,
                                   const std::function<void(LocalId)>& f) {
  auto walk = [&](LocalId root) {
    if (root == kNil || !(nodes_[root].status >> pair & 1)) return;
    std::vector<LocalId> stack{root};
    while (!stack.empty()) {
      LocalId x = stack.back();
      stack.pop_back();
      if (x == kNil || !(nodes_[x].status >> pair & 1)) continue;
      LocalNode& n = nodes_[x];
      if (n.kind == LKind::Leaf) {
        f(x);
        continue;
      }
      if (n.kind == LKind::Middle) {
        ShortcutId s = mspace_.get_down(x, pair);
        if (s != kNil) {
          stack.push_back(mspace_.traverse_down(x, pair));
          continue;
        }
      }
      stack.push_back(n.right);
      stack.push_back(n.left);
    }
  };
  walk(t.buffer_root);
  walk(t.top_root);
}

LocalId LocalForest::unique_status_leaf(const Tree& t, int pair) {
  bool in_buf = t.buffer_root != kNil && (nodes_[t.buffer_root].status >> pair & 1);
  bool in_top = t.top_root != kNil && (nodes_[t.top_root].status >> pair & 1);
  if (in_buf && in_top) return kNil;
  if (!in_buf && !in_top) return kNil;
  LocalId cur = in_buf ? t.buffer_root : t.top_root;
  for (;;) {
    LocalNode& n = nodes_[cur];
    if (n.kind == LKind::Leaf) return cur;
    if (n.kind == LKind::Middle) {
      ShortcutId s = mspace_.get_down(cur, pair);
      if (s != kNil) {
        cur = mspace_.traverse_down(cur, pair);
        continue;
      }
    }
    bool l = n.left != kNil && (nodes_[n.left].status >> pair & 1);
    bool r = n.right != kNil && (nodes_[n.right].status >> pair & 1);
    if (l && r) return kNil;
    DYNCONN_ASSERT(l || r, "status bitmap inconsistent");
    cur = l ? n.left : n.right;
  }
}

LocalId LocalForest::sample_primary_child(const Tree& t, int depth, Rng& rng) {
  int pair = pair_index(depth, EndpointType::Primary);
  auto side_weight = [&](LocalId x) -> std::uint64_t {
    if (x == kNil || !(nodes_[x].status >> pair & 1)) return 0;
    return CounterLayout::decode(nodes_[x].counters.get(layout_, depth));
  };
  std::uint64_t wb = side_weight(t.buffer_root);
  std::uint64_t wt = side_weight(t.top_root);
  if (wb + wt == 0) raise(Errc::EmptyPool, "sampling from empty counter pool");
  LocalId cur = rng.bounded(wb + wt) < wb ? t.buffer_root : t.top_root;
  for (;;) {
    LocalNode& n = nodes_[cur];
    if (n.kind == LKind::Leaf) return cur;
    if (n.kind == LKind::Middle) {
      ShortcutId s = mspace_.get_down(cur, pair);
      if (s != kNil) {
        cur = mspace_.traverse_down(cur, pair);
        continue;
      }
    }
    std::uint64_t wl = side_weight(n.left);
    std::uint64_t wr = side_weight(n.right);
    DYNCONN_ASSERT(wl + wr > 0, "counter pool vanished mid-walk");
    cur = rng.bounded(wl + wr) < wl ? n.left : n.right;
  }
}

void LocalForest::for_each_leaf(const Tree& t, const std::function<void(LocalId)>& f) const {
  auto walk = [&](LocalId root) {
    if (root == kNil) return;
    std::vector<LocalId> stack{root};
    while (!stack.empty()) {
      LocalId x = stack.back();
      stack.pop_back();
      if (x == kNil) continue;
      if (nodes_[x].kind == LKind::Leaf) {
        f(x);
        continue;
      }
      stack.push_back(nodes_[x].right);
      stack.push_back(nodes_[x].left);
    }
  };
  walk(t.buffer_root);
  walk(t.top_root);
}

// ---------------------------------------------------------------- audit

void LocalForest::audit_tree(const Tree& t, NodeId owner) const {
  auto check_subtree = [&](auto&& self, LocalId x) -> void {
    const LocalNode& n = nodes_[x];
    DYNCONN_ASSERT(!n.freed, "freed node reachable");
    if (n.kind == LKind::Leaf) {
      DYNCONN_ASSERT(n.left == kNil && n.right == kNil, "leaf with children");
      return;
    }
    DYNCONN_ASSERT(n.left != kNil, "internal without left child");
    std::uint64_t w = 0;
    PairSet s = 0;
    PackedCounters fold = nodes_[n.left].counters.clone(layout_);
    w += nodes_[n.left].weight;
    s |= nodes_[n.left].status;
    if (n.right != kNil) {
      w += nodes_[n.right].weight;
      s |= nodes_[n.right].status;
      fold.add_from(layout_, nodes_[n.right].counters);
    }
    DYNCONN_ASSERT(n.weight == w, "weight aggregate mismatch");
    DYNCONN_ASSERT(n.status == s, "status aggregate mismatch");
    for (int d = 1; d <= layout_.dmax; ++d)
      DYNCONN_ASSERT(n.counters.get(layout_, d) == fold.get(layout_, d),
                     "counter aggregate mismatch");
    for (LocalId c : {n.left, n.right}) {
      if (c == kNil) continue;
      DYNCONN_ASSERT(nodes_[c].parent == x, "parent pointer mismatch");
      switch (n.kind) {
        case LKind::Buffer:
          DYNCONN_ASSERT(nodes_[c].kind == LKind::Buffer || nodes_[c].kind == LKind::Leaf,
                         "buffer child kind");
          break;
        case LKind::Bottom:
          DYNCONN_ASSERT(nodes_[c].kind == LKind::Bottom || nodes_[c].kind == LKind::Leaf,
                         "bottom child kind");
          break;
        case LKind::Middle:
          DYNCONN_ASSERT(nodes_[c].kind == LKind::Middle || nodes_[c].kind == LKind::Bottom,
                         "middle child kind");
          DYNCONN_ASSERT(nodes_[c].rank == n.rank - 1, "middle rank relation");
          break;
        case LKind::Top:
          DYNCONN_ASSERT(nodes_[c].kind != LKind::Buffer && nodes_[c].kind != LKind::Leaf,
                         "top child kind");
          break;
        default:
          break;
      }
      self(self, c);
    }
    if (n.kind == LKind::Buffer) {
      int bal = h(n.left) - h(n.right);
      DYNCONN_ASSERT(bal >= -1 && bal <= 1, "buffer AVL balance");
      DYNCONN_ASSERT(n.height == 1 + std::max(h(n.left), h(n.right)), "buffer AVL height");
    }
    if (n.kind == LKind::Middle)
      DYNCONN_ASSERT(n.right != kNil, "unary middle node");
  };
  if (t.buffer_root != kNil) {
    DYNCONN_ASSERT(nodes_[t.buffer_root].owner == owner, "buffer owner marker");
    DYNCONN_ASSERT(nodes_[t.buffer_root].parent == kNil, "buffer root parent");
    check_subtree(check_subtree, t.buffer_root);
    // AVL height bound.
    std::uint64_t leaves = std::max<std::uint64_t>(t.buffer_leaves, 1);
    DYNCONN_ASSERT(h(t.buffer_root) <= static_cast<int>(1.45 * (floor_log2(leaves) + 1)) + 2,
                   "buffer height bound");
  } else {
    DYNCONN_ASSERT(t.buffer_leaves == 0, "buffer leaf count drift");
  }
  if (t.top_root != kNil) {
    DYNCONN_ASSERT(nodes_[t.top_root].owner == owner, "top owner marker");
    check_subtree(check_subtree, t.top_root);
  }
  // Below the joining threshold, or joined down to distinct ranks.
  if (t.middle_roots.size() >= std::max<std::uint32_t>(top_capacity_, 2)) {
    std::set<int> ranks;
    for (LocalId r : t.middle_roots) ranks.insert(nodes_[r].rank);
    DYNCONN_ASSERT(ranks.size() == t.middle_roots.size(), "unjoined equal-rank middles");
  }
  for (LocalId r : t.middle_roots) {
    DYNCONN_ASSERT(nodes_[r].rank >= 0, "middle root without rank");
    if (nodes_[r].kind == LKind::Bottom)
      DYNCONN_ASSERT(nodes_[r].rank == floor_log2(nodes_[r].weight), "bottom root rank");
  }
  // Count buffer leaves.
  if (t.buffer_root != kNil) {
    std::uint32_t count = 0;
    std::vector<LocalId> stack{t.buffer_root};
    while (!stack.empty()) {
      LocalId x = stack.back();
      stack.pop_back();
      if (nodes_[x].kind == LKind::Leaf) {
        ++count;
        continue;
      }
      stack.push_back(nodes_[x].left);
      stack.push_back(nodes_[x].right);
    }
    DYNCONN_ASSERT(count == t.buffer_leaves, "buffer leaf count mismatch");
  }
  audit_local_chains(t);
}

// Invariant on local (i,t)-shortcuts: for every single-child local (i,t)-node
// u in a middle tree, the stored local shortcuts chain from u to its local
// (i,t)-child. Also: no shortcut may sit at a branching node or dangle.
void LocalForest::audit_local_chains(const Tree& t) const {
  auto has = [&](LocalId x, int pair) { return (nodes_[x].status >> pair & 1) != 0; };
  auto is_middle_leaf = [&](LocalId x) { return nodes_[x].kind == LKind::Bottom; };
  auto branching = [&](LocalId x, int pair) {
    if (nodes_[x].kind != LKind::Middle) return false;
    return has(nodes_[x].left, pair) && has(nodes_[x].right, pair);
  };
  auto local_child_of = [&](LocalId u, int pair) {
    // nearest descendant local (i,t)-node below u
    LocalId x = u;
    for (;;) {
      DYNCONN_ASSERT(nodes_[x].kind == LKind::Middle, "chain walk left the middle layer");
      LocalId l = nodes_[x].left, r = nodes_[x].right;
      bool hl = has(l, pair), hr = has(r, pair);
      DYNCONN_ASSERT(hl != hr, "single-child walk at a branching node");
      x = hl ? l : r;
      if (is_middle_leaf(x) || branching(x, pair)) return x;
    }
  };
  auto check_chain = [&](LocalId u, int pair) {
    LocalId want = local_child_of(u, pair);
    LocalId cur = u;
    int hops = 0;
    while (cur != want) {
      ShortcutId s = mspace_.get_down(cur, pair);
      DYNCONN_ASSERT(s != kNil, "broken local (i,t)-chain");
      DYNCONN_ASSERT(mspace_.at(s).top == cur, "chain link top mismatch");
      cur = mspace_.at(s).bottom;
      DYNCONN_ASSERT(++hops < 256, "chain loop");
    }
    DYNCONN_ASSERT(mspace_.get_down(want, pair) == kNil || branching(want, pair) == false,
                   "chain extends past a local node");
  };
  for (LocalId r : t.middle_roots) {
    if (nodes_[r].kind != LKind::Middle) continue;
    // collect middle-layer nodes of this tree
    std::vector<LocalId> mids;
    std::vector<LocalId> stack{r};
    while (!stack.empty()) {
      LocalId x = stack.back();
      stack.pop_back();
      if (nodes_[x].kind != LKind::Middle) continue;
      mids.push_back(x);
      stack.push_back(nodes_[x].left);
      stack.push_back(nodes_[x].right);
    }
    for (int pair = 0; pair < 3 * layout_.dmax; ++pair) {
      if (!has(r, pair)) continue;
      // the root, when single-child, anchors a chain
      if (!is_middle_leaf(r) && !branching(r, pair)) check_chain(r, pair);
      for (LocalId m : mids) {
        if (!branching(m, pair)) continue;
        for (LocalId c : {nodes_[m].left, nodes_[m].right}) {
          if (!has(c, pair) || is_middle_leaf(c) || branching(c, pair)) continue;
          check_chain(c, pair);
        }
      }
    }
  }
}

}  // namespace dynconn
