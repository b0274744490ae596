#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "dynconn/approx_counter.hpp"
#include "dynconn/common.hpp"
#include "dynconn/leaf_store.hpp"
#include "dynconn/local_tree.hpp"
#include "dynconn/rng.hpp"
#include "dynconn/shortcuts.hpp"

namespace dynconn {

struct EdgeRecord {
  VertexId u = 0, v = 0;
  std::uint16_t depth = 1;
  EndpointType tu = EndpointType::Secondary, tv = EndpointType::Secondary;
  std::uint32_t slot_u = kNil, slot_v = kNil;
  bool alive = false;
  std::uint16_t promotions = 0, upgrades = 0;  // lifetime event counts

  EndpointType type_at(VertexId w) const { return w == u ? tu : tv; }
  VertexId other(VertexId w) const { return w == u ? v : u; }
};

// One (i+1)-component. Leaves (depth == d_max) are vertices; every other node
// owns a local tree over its H-children. Status bitmaps cache (i,t)-node and
// (i,t)-branching facts; counters hold the approximate i-primary counts.
struct HierarchyNode {
  bool freed = false;
  std::uint16_t depth = 0;
  std::uint32_t weight = 0;
  VertexId vertex = kNil;
  LocalId rep = kNil;  // this node's leaf in its parent's local tree
  std::unique_ptr<LocalForest::Tree> ltree;
  PairSet is_node = 0, is_branching = 0;
  PackedCounters counters;
  std::unique_ptr<NodeShortcutState> shortcut_state;
  std::uint8_t torn = 0;  // 1: on the u-side torn path, 2: v-side
  std::uint64_t mark_epoch = 0;
};

struct HierarchyConfig {
  std::uint64_t buffer_capacity = 0;  // 0: (log2 n)^5
  std::uint32_t top_capacity = 0;     // 0: 2*log2 n (min 4)
};

// The hierarchy H with its shortcut infrastructure and induced (i,t)-forests.
// During a deletion cascade the two ancestor paths are "torn": their shortcut
// chains are parked as local-tree status marks, every operation here reads
// both representations, and rebuild_path re-derives the canonical one.
class Hierarchy {
 public:
  Hierarchy(std::uint32_t n, const HierarchyConfig& cfg = {});

  // ShortcutSpace host.
  int level(NodeId x) const { return nodes_[x].depth + 1; }
  NodeShortcutState& sstate(NodeId x) {
    auto& p = nodes_[x].shortcut_state;
    if (!p) p = std::make_unique<NodeShortcutState>();
    return *p;
  }
  const NodeShortcutState* sstate_if(NodeId x) const { return nodes_[x].shortcut_state.get(); }

  std::uint32_t n() const { return n_; }
  int dmax() const { return layout_.dmax; }
  const CounterLayout& layout() const { return layout_; }
  LocalForest& lf() { return lf_; }
  const LocalForest& lf() const { return lf_; }
  ShortcutSpace<Hierarchy>& hspace() { return hspace_; }
  const ShortcutSpace<Hierarchy>& hspace() const { return hspace_; }
  LeafStore& store() { return store_; }
  const LeafStore& store() const { return store_; }

  const HierarchyNode& node(NodeId x) const { return nodes_[x]; }
  std::size_t node_pool_size() const { return nodes_.size(); }
  bool materialized(VertexId v) const { return leaf_of_[v] != kNil; }
  NodeId leaf_of(VertexId v) const { return leaf_of_[v]; }
  NodeId ensure_leaf(VertexId v);  // materializes the root-to-leaf chain
  NodeId parent_of(NodeId x) const;
  NodeId root_of(NodeId x) const;
  NodeId ancestor_at_depth(NodeId x, int depth) const;
  LocalForest::Tree& tree_of(NodeId x) { return *nodes_[x].ltree; }

  // -- edges -----------------------------------------------------------------
  EdgeId add_edge(VertexId u, VertexId v, int depth, EndpointType tu, EndpointType tv);
  void remove_edge(EdgeId e);
  EdgeId find_edge(VertexId u, VertexId v) const;
  const EdgeRecord& edge(EdgeId e) const { return edges_[e]; }
  std::size_t edge_pool_size() const { return edges_.size(); }
  void convert_to_witness(EdgeId e);
  // Retags one edge to depth+1 with the given endpoint type (promotion).
  void promote_edge(EdgeId e, EndpointType new_type);

  // -- Lemma-2 style operations ------------------------------------------------
  // Merges sibling nodes (or roots) into members.front(), then promotes every
  // i-witness edge touching the merged node to depth i+1.
  NodeId merge_promote(const std::vector<NodeId>& members);
  void upgrade_secondary(NodeId v, int i);
  // Promotes the given depth-i primary-primary edges under v to
  // (i+1)-secondary and rebuilds the remaining i-primary counters.
  void promote_primary(NodeId v, int i, const std::vector<EdgeId>& edges);
  std::pair<NodeId, NodeId> split(NodeId parent, NodeId child, std::uint8_t child_torn);
  void enumerate_endpoints(NodeId v, int pair,
                           const std::function<void(VertexId, EdgeId)>& f);
  std::uint64_t primary_count(NodeId v, int i) const;

  // -- (i,t)-forest navigation -------------------------------------------------
  bool has_status(NodeId x, int pair) const { return nodes_[x].is_node >> pair & 1; }
  NodeId itf_parent(NodeId v, int pair);
  std::vector<NodeId> itf_children(NodeId v, int pair);
  NodeId it_root_of(NodeId leaf, int pair);
  // Bulk status retag over the (i,t)-tree rooted at `root`.
  void bulk_retag(NodeId root, int pair, const std::vector<NodeId>& minus,
                  const std::vector<NodeId>& plus, int pair_new);

  // -- bracket -----------------------------------------------------------------
  void uncover_path(NodeId leaf, std::uint8_t side);
  void rebuild_path(NodeId leaf);
  void rebuild_node_chains(NodeId x);

  // -- counters ----------------------------------------------------------------
  void rebuild_primary_counters(NodeId v, int i);
  void refresh_leaf_primary_counter(NodeId leaf, int i);

  // Top-down (1+o(1))-uniform draw of one i-primary endpoint under v:
  // counter-proportional choices at branching nodes, chain hops between them,
  // a uniform pick at the leaf.
  std::pair<VertexId, EdgeId> sample_primary_endpoint(NodeId v, int i, Rng& rng);

  // marking
  std::uint64_t new_epoch() { return ++epoch_; }
  void mark(NodeId x) { nodes_[x].mark_epoch = epoch_; }
  bool marked(NodeId x) const { return nodes_[x].mark_epoch == epoch_; }

  // An incremental walker over the endpoints of one (i,t)-tree; one endpoint
  // per step (the parallel-DFS and batch-sampling races need this).
  class EndpointWalk {
   public:
    EndpointWalk(Hierarchy& h, NodeId v, int pair);
    bool next(VertexId& w, EdgeId& e);

   private:
    Hierarchy& h_;
    int pair_;
    std::vector<NodeId> stack_;
    std::vector<EdgeId> current_;
    std::size_t idx_ = 0;
    VertexId current_vertex_ = 0;
  };

  // debugging/audit access
  template <class F>
  void for_each_live_node(F&& f) const {
    for (NodeId x = 0; x < nodes_.size(); ++x)
      if (!nodes_[x].freed) f(x, nodes_[x]);
  }
  template <class F>
  void for_each_live_edge(F&& f) const {
    for (EdgeId e = 0; e < edges_.size(); ++e)
      if (edges_[e].alive) f(e, edges_[e]);
  }
  std::uint64_t stat_promotions = 0, stat_upgrades = 0, stat_coverings = 0;

 private:
  friend class EndpointWalk;

  NodeId alloc_node();
  void free_node(NodeId x);
  void set_leaf_status_bit(NodeId leaf, int pair, bool on);

  // itf internals (itforest.cpp)
  void itf_add_leaf(NodeId x, int pair);
  void itf_remove_leaf(NodeId x, int pair);
  NodeId chase_chain_down(NodeId x, int pair);
  NodeId resolve_head(NodeId c, int pair);
  void build_chain(const std::vector<NodeId>& path_down, int pair);
  void attach_local(NodeId p, NodeId head, int pair);
  void update_counters_upward(NodeId from, int i);
  std::uint64_t node_primary_value(NodeId x, int i) const;
  bool in_it_forest(NodeId x, int pair) const;
  void retag_endpoint(VertexId w, EdgeId e, int old_pair, int new_pair);

  // bracket internals (bracket.cpp)
  void dismantle_node_downward(NodeId x);
  void uncover_node(NodeId x);
  void derive_status_from_local(NodeId x);
  void sync_rep_with_content(NodeId x);

  std::uint32_t n_;
  CounterLayout layout_;
  LocalForest lf_;
  ShortcutSpace<Hierarchy> hspace_;
  LeafStore store_;
  std::vector<HierarchyNode> nodes_;
  std::vector<NodeId> node_free_;
  std::vector<NodeId> leaf_of_;
  std::vector<EdgeRecord> edges_;
  std::vector<EdgeId> edge_free_;
  std::unordered_map<std::uint64_t, EdgeId> key2id_;
  std::uint64_t epoch_ = 0;
};

}  // namespace dynconn
