#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dynconn/approx_counter.hpp"
#include "dynconn/common.hpp"
#include "dynconn/rng.hpp"
#include "dynconn/shortcuts.hpp"

namespace dynconn {

enum class LKind : std::uint8_t { Leaf, Buffer, Bottom, Middle, Top };

// One node of some local tree. Leaves represent H-children; Buffer/Bottom/Top
// are binary internals; Middle nodes join equal-rank middle trees. Aggregates
// (weight, status OR, counter fold over status-marked leaves) are exact at
// every internal node.
struct LocalNode {
  LKind kind = LKind::Leaf;
  bool freed = false;
  std::uint16_t gen = 0;         // bumped per reuse; audits key on (id, gen)
  std::int16_t rank = -1;        // middle nodes and bottom roots
  std::uint8_t height = 0;       // buffer internals (AVL); leaves 0
  LocalId parent = kNil;
  LocalId left = kNil, right = kNil;
  NodeId owner = kNil;           // valid at tree tops only
  NodeId child = kNil;           // leaves: represented H-child
  std::uint64_t weight = 0;
  PairSet status = 0;
  PackedCounters counters;
  std::unique_ptr<NodeShortcutState> shortcut_state;  // middle layer only
};

// All local trees live in one pool; each hierarchy node keeps a Tree record.
class LocalForest {
 public:
  struct Tree {
    LocalId buffer_root = kNil;
    LocalId top_root = kNil;
    std::vector<LocalId> middle_roots;
    std::uint32_t buffer_leaves = 0;
  };

  LocalForest(const CounterLayout& layout, std::uint64_t buffer_capacity,
              std::uint32_t top_capacity)
      : layout_(layout),
        buffer_capacity_(buffer_capacity),
        top_capacity_(top_capacity),
        mspace_(*this, layout.dmax) {}

  // ShortcutSpace host interface (levels are middle ranks + 1).
  int level(std::uint32_t ref) const {
    DYNCONN_ASSERT(nodes_[ref].rank >= 0, "shortcut on unranked local node");
    return nodes_[ref].rank + 1;
  }
  NodeShortcutState& sstate(std::uint32_t ref) {
    auto& p = nodes_[ref].shortcut_state;
    if (!p) p = std::make_unique<NodeShortcutState>();
    return *p;
  }
  const NodeShortcutState* sstate_if(std::uint32_t ref) const {
    return nodes_[ref].shortcut_state.get();
  }

  const LocalNode& node(LocalId id) const { return nodes_[id]; }
  const CounterLayout& layout() const { return layout_; }
  ShortcutSpace<LocalForest>& mspace() { return mspace_; }
  const ShortcutSpace<LocalForest>& mspace() const { return mspace_; }
  std::uint64_t buffer_capacity() const { return buffer_capacity_; }

  // -- child lifecycle ------------------------------------------------------
  LocalId add_child(Tree& t, NodeId owner, NodeId child, std::uint64_t weight);
  void delete_child(Tree& t, NodeId owner, LocalId leaf);
  // Absorbs src into dst (buffers joined, middle roots appended, top rebuilt).
  void merge(Tree& dst, NodeId owner, Tree& src);

  // Owner of the tree containing this node (walk to the top).
  NodeId owner_of(LocalId id) const;
  // Number of local tree hops from leaf to its tree top (cost audits).
  int hops_to_top(LocalId leaf) const;

  // -- per-leaf state -------------------------------------------------------
  // Local (i,t)-status. Adding status (or raising a counter) relocates a
  // bottom leaf into the buffer first, so bottom nodes only ever decrease.
  void leaf_add_status(Tree& t, NodeId owner, LocalId leaf, int pair,
                       std::uint64_t primary_count = 0);
  void leaf_remove_status(Tree& t, NodeId owner, LocalId leaf, int pair);
  void leaf_set_counter(Tree& t, NodeId owner, LocalId leaf, int depth, std::uint64_t value);
  void leaf_set_weight(Tree& t, NodeId owner, LocalId leaf, std::uint64_t weight);

  // -- queries --------------------------------------------------------------
  PairSet root_status(const Tree& t) const;
  std::uint64_t root_weight(const Tree& t) const;
  ApproxCounter root_counter(const Tree& t, int depth) const;
  void enumerate_status(const Tree& t, int pair, const std::function<void(LocalId)>& f);
  LocalId unique_status_leaf(const Tree& t, int pair);
  LocalId sample_primary_child(const Tree& t, int depth, Rng& rng);
  void for_each_leaf(const Tree& t, const std::function<void(LocalId)>& f) const;

  // Deterministic full-structure audit; throws on violation.
  void audit_tree(const Tree& t, NodeId owner) const;
  void audit_local_chains(const Tree& t) const;

 private:
  friend class AuditAccess;

  LocalId alloc(LKind kind);
  void free_node(LocalId id);
  void recompute(LocalId id);
  LocalId sibling_of(LocalId id) const;
  void replace_child(LocalId parent, LocalId was, LocalId now);

  // AVL buffer layer.
  int h(LocalId id) const { return id == kNil ? -1 : nodes_[id].height; }
  void update_height(LocalId id);
  LocalId rotate(LocalId root);
  LocalId rebalance_up(LocalId from);  // returns tree top
  void buffer_insert(Tree& t, NodeId owner, LocalId leaf);
  void buffer_delete(Tree& t, NodeId owner, LocalId leaf);
  LocalId avl_join(LocalId a, LocalId b);

  // Bottom/middle/top plumbing.
  bool in_buffer(LocalId leaf) const;
  LocalId bottom_root_of(LocalId leaf) const;
  LocalId middle_root_of(LocalId mid) const;
  void maybe_convert_buffer(Tree& t, NodeId owner);
  void convert_buffer_to_bottom(Tree& t, NodeId owner);
  LocalId build_balanced(const std::vector<LocalId>& leaves, std::size_t lo, std::size_t hi,
                         LKind kind);
  void rebuild_top(Tree& t, NodeId owner);
  void maybe_join_middles(Tree& t, NodeId owner);
  void relocate_to_buffer(Tree& t, NodeId owner, LocalId leaf);
  void delete_bottom_leaf(Tree& t, NodeId owner, LocalId leaf);
  // Recompute aggregates bottom-root -> middle root -> top root after a
  // change below; repairs middle chains for pairs the bottom root lost.
  void propagate_above_bottom(Tree& t, NodeId owner, LocalId bottom_root, PairSet before,
                              bool rank_may_drop);
  void middle_remove_status(LocalId bottom_root, int pair);
  void remove_middle_path(Tree& t, NodeId owner, LocalId bottom_root);
  void refresh_to_top(Tree& t, NodeId owner, LocalId from);
  void set_top_markers(Tree& t, NodeId owner);
  void free_top_internals(Tree& t);

  const CounterLayout layout_;
  std::uint64_t buffer_capacity_;
  std::uint32_t top_capacity_;
  std::vector<LocalNode> nodes_;
  std::vector<LocalId> free_;
  ShortcutSpace<LocalForest> mspace_;
};

}  // namespace dynconn
