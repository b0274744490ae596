#pragma once

#include <unordered_map>
#include <vector>

#include "dynconn/common.hpp"

namespace dynconn {

// Dynamic connectivity on a forest: Euler-tour sequences stored in an
// (a,b)-tree with branching factor b. Queries compare sequence-tree roots, so
// query cost is one leaf-to-root walk of height ~ log_b of the tour length.
//
// A tour rooted at r is: token(r), then for each child c in order:
// arc(r->c), tour(c), arc(c->r). Rerooting is a cyclic rotation at token(v).
class EulerForest {
 public:
  explicit EulerForest(std::uint32_t n, int branching = 8)
      : min_deg_(2), max_deg_(branching < 3 ? 3 : branching) {
    min_deg_ = std::max(2, (max_deg_ + 1) / 2);
    token_.reserve(n);
    for (std::uint32_t v = 0; v < n; ++v) token_.push_back(new_leaf(v, kNil));
  }

  std::uint32_t size() const { return static_cast<std::uint32_t>(token_.size()); }

  bool connected(VertexId u, VertexId v) const {
    return root_of(token_[u]) == root_of(token_[v]);
  }

  bool has_edge(VertexId u, VertexId v) const {
    return arcs_.count(EdgeKey(u, v).packed()) != 0;
  }

  void link(VertexId u, VertexId v) {
    DYNCONN_ASSERT(!connected(u, v), "link would create a cycle");
    reroot(u);
    reroot(v);
    ElemId auv = new_leaf(u, v);
    ElemId avu = new_leaf(v, u);
    arcs_[EdgeKey(u, v).packed()] = u < v ? ArcPair{auv, avu} : ArcPair{avu, auv};
    std::uint32_t r = concat(root_of(token_[u]), auv);
    r = concat(r, root_of(token_[v]));
    concat(r, avu);
  }

  void cut(VertexId u, VertexId v) {
    auto it = arcs_.find(EdgeKey(u, v).packed());
    DYNCONN_ASSERT(it != arcs_.end(), "cut of a non-forest edge");
    ElemId p = it->second.fwd, q = it->second.bwd;  // (min->max, max->min)
    arcs_.erase(it);
    if (!precedes(p, q)) std::swap(p, q);
    // Tour: A, p, B, q, C.  B is the severed subtree's tour; A+C the rest.
    auto [a, rest] = split_before(p);
    (void)rest;
    auto [pb, qc] = split_before(q);
    (void)pb;
    (void)qc;
    auto [p_only, b] = split_after(p);
    (void)p_only;
    (void)b;
    auto [q_only, c] = split_after(q);
    (void)q_only;
    concat(a, c);
    free_node(p);
    free_node(q);
  }

  // Number of vertices (tokens) in u's tree.
  std::uint32_t tree_size(VertexId u) const { return nodes_[root_of(token_[u])].tokens; }

  int tree_height(VertexId u) const {
    int h = 0;
    for (std::uint32_t x = root_of(token_[u]); !nodes_[x].leaf; x = nodes_[x].kids[0]) ++h;
    return h;
  }

  // Structural audit: child arity, uniform leaf depth, parent pointers,
  // token counts. Throws on violation.
  void audit() const;

 private:
  struct Node {
    std::uint32_t parent = kNil;
    bool leaf = false;
    bool freed = false;
    // leaf payload: token (a == b) or arc a->b
    VertexId a = 0, b = 0;
    std::uint32_t tokens = 0;
    std::vector<std::uint32_t> kids;  // internal only
  };
  struct ArcPair {
    ElemId fwd, bwd;
  };

  int min_deg_, max_deg_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> free_;
  std::vector<ElemId> token_;
  std::unordered_map<std::uint64_t, ArcPair> arcs_;

  std::uint32_t alloc() {
    if (!free_.empty()) {
      std::uint32_t id = free_.back();
      free_.pop_back();
      nodes_[id] = Node{};
      return id;
    }
    nodes_.push_back(Node{});
    return static_cast<std::uint32_t>(nodes_.size() - 1);
  }
  void free_node(std::uint32_t id) {
    nodes_[id] = Node{};
    nodes_[id].freed = true;
    free_.push_back(id);
  }

  ElemId new_leaf(VertexId a, VertexId b) {
    std::uint32_t id = alloc();
    Node& n = nodes_[id];
    n.leaf = true;
    n.a = a;
    n.b = b == kNil ? a : b;
    n.tokens = (b == kNil) ? 1 : 0;
    return id;
  }

  std::uint32_t root_of(std::uint32_t x) const {
    while (nodes_[x].parent != kNil) x = nodes_[x].parent;
    return x;
  }

  int height(std::uint32_t x) const {
    int h = 0;
    while (!nodes_[x].leaf) {
      x = nodes_[x].kids[0];
      ++h;
    }
    return h;
  }

  void refresh(std::uint32_t x) {
    Node& n = nodes_[x];
    n.tokens = 0;
    for (std::uint32_t k : n.kids) {
      n.tokens += nodes_[k].tokens;
      nodes_[k].parent = x;
    }
  }

  void refresh_up(std::uint32_t x) {
    for (; x != kNil; x = nodes_[x].parent) {
      if (!nodes_[x].leaf) refresh(x);
    }
  }

  // True iff element p comes before q in their (common) tour.
  bool precedes(ElemId p, ElemId q) const {
    std::vector<std::uint32_t> pp = path_to_root(p), qp = path_to_root(q);
    DYNCONN_ASSERT(pp.back() == qp.back(), "order query across trees");
    // Walk down from the root until the paths diverge.
    auto ip = pp.rbegin(), iq = qp.rbegin();
    while (ip != pp.rend() && iq != qp.rend() && *ip == *iq) {
      ++ip;
      ++iq;
    }
    DYNCONN_ASSERT(ip != pp.rend() && iq != qp.rend(), "order query on equal elements");
    std::uint32_t parent = *(ip - 1);
    const auto& kids = nodes_[parent].kids;
    for (std::uint32_t k : kids) {
      if (k == *ip) return true;
      if (k == *iq) return false;
    }
    raise(Errc::Corruption, "broken parent pointers in tour tree");
  }

  std::vector<std::uint32_t> path_to_root(std::uint32_t x) const {
    std::vector<std::uint32_t> p;
    for (; x != kNil; x = nodes_[x].parent) p.push_back(x);
    return p;
  }

  // Concatenate two trees (either may be kNil); returns the new root.
  std::uint32_t concat(std::uint32_t r1, std::uint32_t r2) {
    if (r1 == kNil) return r2;
    if (r2 == kNil) return r1;
    int h1 = height(r1), h2 = height(r2);
    if (h1 == h2) {
      // Merge the roots' child lists when they fit; keeps nodes fat.
      if (h1 > 0 && nodes_[r1].kids.size() + nodes_[r2].kids.size() <=
                        static_cast<std::size_t>(max_deg_)) {
        Node& n1 = nodes_[r1];
        Node& n2 = nodes_[r2];
        n1.kids.insert(n1.kids.end(), n2.kids.begin(), n2.kids.end());
        n2.kids.clear();
        free_node(r2);
        refresh(r1);
        return r1;
      }
      std::uint32_t root = alloc();
      Node& n = nodes_[root];
      n.kids = {r1, r2};
      refresh(root);
      return root;
    }
    if (h1 > h2) {
      std::uint32_t x = r1;
      for (int h = h1; h > h2 + 1; --h) x = nodes_[x].kids.back();
      nodes_[x].kids.push_back(r2);
      nodes_[r2].parent = x;
      return fixup_overflow(x);
    }
    std::uint32_t x = r2;
    for (int h = h2; h > h1 + 1; --h) x = nodes_[x].kids.front();
    nodes_[x].kids.insert(nodes_[x].kids.begin(), r1);
    nodes_[r1].parent = x;
    return fixup_overflow(x);
  }

  // Split overfull nodes upward; refresh aggregates to the root; returns root.
  std::uint32_t fixup_overflow(std::uint32_t x) {
    std::uint32_t last = x;
    while (x != kNil) {
      if (!nodes_[x].leaf &&
          nodes_[x].kids.size() > static_cast<std::size_t>(max_deg_)) {
        std::uint32_t sib = alloc();  // may reallocate the pool
        std::size_t keep = nodes_[x].kids.size() / 2;
        nodes_[sib].kids.assign(nodes_[x].kids.begin() + keep, nodes_[x].kids.end());
        nodes_[x].kids.resize(keep);
        refresh(x);
        refresh(sib);
        std::uint32_t par = nodes_[x].parent;
        if (par == kNil) {
          std::uint32_t root = alloc();
          nodes_[root].kids = {x, sib};
          refresh(root);
          return root;
        }
        auto& pk = nodes_[par].kids;
        for (std::size_t i = 0; i < pk.size(); ++i) {
          if (pk[i] == x) {
            pk.insert(pk.begin() + i + 1, sib);
            break;
          }
        }
        nodes_[sib].parent = par;
        last = x = par;
      } else {
        if (!nodes_[x].leaf) refresh(x);
        last = x;
        x = nodes_[x].parent;
      }
    }
    return last;
  }

  // Splits e's tree so the left part holds everything before e and the right
  // part starts with e.
  std::pair<std::uint32_t, std::uint32_t> split_before(ElemId e) { return split(e, false); }
  // Left part ends with e.
  std::pair<std::uint32_t, std::uint32_t> split_after(ElemId e) { return split(e, true); }

  std::pair<std::uint32_t, std::uint32_t> split(ElemId e, bool keep_in_left) {
    // Collect path root -> e, then stitch together the left and right
    // fragments level by level.
    std::vector<std::uint32_t> path = path_to_root(e);  // e first, root last
    std::uint32_t left = kNil, right = kNil;
    // Process from the root down so fragments concatenate in sequence order.
    for (std::size_t i = path.size(); i-- > 1;) {
      std::uint32_t node = path[i];
      std::uint32_t child_on_path = path[i - 1];
      Node& n = nodes_[node];
      std::vector<std::uint32_t> lk, rk;
      bool seen = false;
      for (std::uint32_t k : n.kids) {
        if (k == child_on_path) {
          seen = true;
          continue;
        }
        (seen ? rk : lk).push_back(k);
      }
      DYNCONN_ASSERT(seen, "broken tour path");
      left = concat(left, make_fragment(lk));
      // Right fragments accumulate outside-in; prepend.
      right = concat(make_fragment(rk), right);
    }
    // Detach everything on the path; internal path nodes are freed.
    for (std::size_t i = 1; i < path.size(); ++i) free_node(path[i]);
    nodes_[e].parent = kNil;
    if (keep_in_left)
      left = concat(left, e);
    else
      right = concat(e, right);
    return {left, right};
  }

  // Builds a tree from same-height siblings (may be empty or singular).
  std::uint32_t make_fragment(const std::vector<std::uint32_t>& kids) {
    if (kids.empty()) return kNil;
    for (std::uint32_t k : kids) nodes_[k].parent = kNil;
    if (kids.size() == 1) return kids[0];
    std::uint32_t root = alloc();
    nodes_[root].kids = kids;
    refresh(root);
    return fixup_overflow(root);
  }

  void reroot(VertexId v) {
    ElemId t = token_[v];
    if (nodes_[t].parent == kNil) return;  // singleton
    auto [l, r] = split_before(t);
    concat(r, l);
  }
};

inline void EulerForest::audit() const {
  std::vector<char> seen(nodes_.size(), 0);
  for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.freed) continue;
    for (std::uint32_t k : n.kids)
      DYNCONN_ASSERT(nodes_[k].parent == id, "parent pointer mismatch");
  }
  for (ElemId t : token_) {
    std::uint32_t r = root_of(t);
    if (seen[r]) continue;
    seen[r] = 1;
    // Uniform leaf depth + arity bounds.
    struct Item {
      std::uint32_t id;
      int depth;
    };
    std::vector<Item> stack{{r, 0}};
    int leaf_depth = -1;
    std::uint32_t tokens = 0;
    while (!stack.empty()) {
      auto [id, d] = stack.back();
      stack.pop_back();
      const Node& n = nodes_[id];
      if (n.leaf) {
        if (leaf_depth < 0) leaf_depth = d;
        DYNCONN_ASSERT(leaf_depth == d, "non-uniform leaf depth");
        tokens += n.tokens;
        continue;
      }
      DYNCONN_ASSERT(n.kids.size() >= 2, "undersized internal node");
      DYNCONN_ASSERT(static_cast<int>(n.kids.size()) <= max_deg_, "oversized internal node");
      for (std::uint32_t k : n.kids) stack.push_back({k, d + 1});
    }
    DYNCONN_ASSERT(tokens == nodes_[r].tokens, "token count mismatch");
  }
}

}  // namespace dynconn
