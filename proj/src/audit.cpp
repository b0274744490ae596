#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "dynconn/engine.hpp"
#include "dynconn/oracle.hpp"

// Invariant checkers. Everything here recomputes ground truth by brute force
// and compares it with the engine's cached structures; nothing is trusted.

namespace dynconn {

namespace {

struct Failure {
  std::string what;
};

#define AUDIT_CHECK(cond, msg)                         \
  do {                                                 \
    if (!(cond)) throw Failure{msg};                   \
  } while (0)

class Auditor {
 public:
  explicit Auditor(Engine& eng) : eng_(eng), h_(eng.hierarchy()) {}

  void run(AuditLevel level) {
    collect();
    check_torn_clear();
    check_structure();
    check_store_conservation();
    check_weight_property();
    check_components();
    check_max_spanning_forest();
    if (level == AuditLevel::Full) {
      check_status_bitmaps();
      check_local_marks();
      check_chains();
      check_shortcut_wellformed();
      check_non_crossing();
      check_counter_precision();
      check_storage_bound();
      check_local_trees();
      eng_.forest().audit();
    }
  }

 private:
  Engine& eng_;
  Hierarchy& h_;
  std::vector<NodeId> live_;
  std::map<NodeId, std::vector<NodeId>> children_;
  std::map<NodeId, std::vector<VertexId>> vertices_below_;
  std::vector<std::pair<EdgeId, EdgeRecord>> edges_;

  int pair_count() const { return 3 * h_.dmax(); }

  void collect() {
    h_.for_each_live_node([&](NodeId x, const HierarchyNode& nd) {
      live_.push_back(x);
      if (nd.ltree) {
        auto& kids = children_[x];
        h_.lf().for_each_leaf(*nd.ltree, [&](LocalId l) {
          NodeId c = h_.lf().node(l).child;
          kids.push_back(c);
          AUDIT_CHECK(h_.node(c).rep == l, "rep back-pointer mismatch");
        });
      }
    });
    h_.for_each_live_edge([&](EdgeId e, const EdgeRecord& r) { edges_.emplace_back(e, r); });
    // vertex sets via DFS from roots
    for (NodeId x : live_) {
      if (h_.node(x).rep != kNil) continue;  // not a root
      collect_vertices(x);
    }
  }

  const std::vector<VertexId>& collect_vertices(NodeId x) {
    auto it = vertices_below_.find(x);
    if (it != vertices_below_.end()) return it->second;
    std::vector<VertexId> out;
    if (h_.node(x).depth == h_.dmax()) {
      out.push_back(h_.node(x).vertex);
    } else {
      for (NodeId c : children_[x]) {
        const auto& sub = collect_vertices(c);
        out.insert(out.end(), sub.begin(), sub.end());
      }
    }
    return vertices_below_.emplace(x, std::move(out)).first->second;
  }

  void check_torn_clear() {
    for (NodeId x : live_) AUDIT_CHECK(h_.node(x).torn == 0, "torn flag outside a cascade");
  }

  void check_structure() {
    for (NodeId x : live_) {
      const HierarchyNode& nd = h_.node(x);
      if (nd.depth == h_.dmax()) {
        AUDIT_CHECK(nd.vertex != kNil && h_.leaf_of(nd.vertex) == x, "leaf/vertex mapping");
        AUDIT_CHECK(nd.weight == 1, "leaf weight");
        continue;
      }
      AUDIT_CHECK(nd.ltree != nullptr, "internal node without local tree");
      std::uint64_t w = 0;
      for (NodeId c : children_[x]) {
        AUDIT_CHECK(h_.node(c).depth == nd.depth + 1, "child depth relation");
        AUDIT_CHECK(h_.lf().owner_of(h_.node(c).rep) == x, "owner walk mismatch");
        w += h_.node(c).weight;
      }
      AUDIT_CHECK(nd.weight == w, "node weight is not the sum of its children");
      AUDIT_CHECK(!children_[x].empty(), "internal node with no children");
    }
  }

  void check_store_conservation() {
    for (auto& [e, r] : edges_) {
      for (auto [w, t, slot] :
           {std::tuple{r.u, r.tu, r.slot_u}, std::tuple{r.v, r.tv, r.slot_v}}) {
        int pair = pair_index(r.depth, t);
        auto span = h_.store().enumerate(w, pair);
        AUDIT_CHECK(slot < span.size() && span[slot] == e, "endpoint slot back-pointer");
      }
      AUDIT_CHECK((r.tu == EndpointType::Witness) == (r.tv == EndpointType::Witness),
                  "witness edges must have two witness endpoints");
    }
    // Every stored endpoint belongs to a live edge with matching depth/type.
    for (VertexId w = 0; w < h_.n(); ++w) {
      for (int pair = 0; pair < pair_count(); ++pair) {
        for (EdgeId e : h_.store().enumerate(w, pair)) {
          const EdgeRecord& r = h_.edge(e);
          AUDIT_CHECK(r.alive, "stored endpoint of a dead edge");
          AUDIT_CHECK(r.depth == pair_depth(pair) && r.type_at(w) == pair_type(pair),
                      "stored endpoint with wrong depth/type");
        }
      }
    }
  }

  void check_weight_property() {
    for (NodeId x : live_) {
      const HierarchyNode& nd = h_.node(x);
      AUDIT_CHECK(nd.weight <= (std::uint64_t{h_.n()} >> nd.depth),
                  "weight property w(u^i) <= n/2^i violated");
    }
  }

  void check_components() {
    OracleGraph og(h_.n());
    for (auto& [e, r] : edges_) og.insert(r.u, r.v, r.depth);
    for (int i = 0; i <= h_.dmax(); ++i) {
      auto want = og.components_at_depth(i);
      std::set<std::vector<VertexId>> want_set;
      for (auto& comp : want) {
        std::vector<VertexId> s(comp);
        std::sort(s.begin(), s.end());
        want_set.insert(s);
      }
      std::set<std::vector<VertexId>> got_set;
      std::vector<char> seen(h_.n(), 0);
      for (NodeId x : live_) {
        if (h_.node(x).depth != i) continue;
        std::vector<VertexId> s = vertices_below_.at(x);
        std::sort(s.begin(), s.end());
        for (VertexId w : s) seen[w] = 1;
        got_set.insert(std::move(s));
      }
      for (VertexId w = 0; w < h_.n(); ++w)
        if (!seen[w]) got_set.insert({w});  // unmaterialized singleton
      AUDIT_CHECK(got_set == want_set, "depth-" + std::to_string(i) +
                                           " components do not match the oracle");
    }
  }

  void check_max_spanning_forest() {
    OracleGraph og(h_.n());
    std::vector<EdgeKey> witness;
    for (auto& [e, r] : edges_) {
      og.insert(r.u, r.v, r.depth);
      if (r.tu == EndpointType::Witness) {
        witness.emplace_back(r.u, r.v);
        AUDIT_CHECK(eng_.forest().has_edge(r.u, r.v), "witness edge missing from the forest");
      } else {
        AUDIT_CHECK(!eng_.forest().has_edge(r.u, r.v), "non-witness edge in the forest");
      }
    }
    AUDIT_CHECK(og.max_spanning_forest_ok(witness), "maximum-spanning-forest property violated");
  }

  // Definitional recompute of is_node / is_branching per (i,t).
  void check_status_bitmaps() {
    for (int pair = 0; pair < pair_count(); ++pair) {
      int i = pair_depth(pair);
      std::map<NodeId, int> kids_in_f;
      std::set<NodeId> in_f;
      for (VertexId w = 0; w < h_.n(); ++w) {
        if (h_.store().size(w, pair) == 0) continue;
        NodeId cur = h_.leaf_of(w);
        in_f.insert(cur);
        while (h_.node(cur).depth > i) {
          NodeId p = h_.parent_of(cur);
          if (!in_f.insert(p).second) {
            ++kids_in_f[p];
            break;
          }
          kids_in_f[p] = 1;
          cur = p;
        }
      }
      for (NodeId x : live_) {
        const HierarchyNode& nd = h_.node(x);
        bool is_leaf = nd.depth == h_.dmax() && nd.vertex != kNil &&
                       h_.store().size(nd.vertex, pair) > 0;
        bool member = in_f.count(x) != 0;
        bool branching = member && kids_in_f[x] >= 2;
        bool is_root = member && nd.depth == i;
        bool child_of_branching = false;
        if (member && nd.rep != kNil && nd.depth > i) {
          NodeId p = h_.parent_of(x);
          child_of_branching = in_f.count(p) && kids_in_f[p] >= 2;
        }
        bool want = is_leaf || is_root || branching || child_of_branching;
        bool got = (nd.is_node >> pair & 1) != 0;
        AUDIT_CHECK(got == want, "is_node bitmap mismatch at pair " + std::to_string(pair));
        bool gotb = (nd.is_branching >> pair & 1) != 0;
        AUDIT_CHECK(gotb == branching, "is_branching bitmap mismatch");
      }
    }
  }

  // Local (i,t)-marks: exactly at the children of branching nodes.
  void check_local_marks() {
    for (NodeId x : live_) {
      const HierarchyNode& nd = h_.node(x);
      if (!nd.ltree) continue;
      h_.lf().for_each_leaf(*nd.ltree, [&](LocalId l) {
        NodeId c = h_.lf().node(l).child;
        PairSet marks = h_.lf().node(l).status;
        for (PairSet m = marks; m;) {
          int pair = __builtin_ctzll(m);
          m &= m - 1;
          AUDIT_CHECK(h_.has_status(c, pair), "marked leaf whose child lacks (i,t)-status");
          AUDIT_CHECK((nd.is_branching >> pair & 1) != 0,
                      "marked leaf under a non-branching node");
        }
        // branching parents mark every (i,t)-node child
        for (PairSet m = nd.is_branching & h_.node(c).is_node; m;) {
          int pair = __builtin_ctzll(m);
          m &= m - 1;
          AUDIT_CHECK((marks >> pair & 1) != 0, "unmarked (i,t)-child of a branching node");
        }
      });
    }
  }

  // Invariant on (i,t)-shortcuts: stored chains connect every single-child
  // (i,t)-node to its (i,t)-child.
  void check_chains() {
    for (NodeId x : live_) {
      const HierarchyNode& nd = h_.node(x);
      if (nd.depth == h_.dmax()) continue;
      for (int pair = 0; pair < pair_count(); ++pair) {
        if (!(nd.is_node >> pair & 1) || (nd.is_branching >> pair & 1)) continue;
        // definitional (i,t)-child: descend toward the unique subtree holding
        // pair endpoints
        NodeId want = descend_to_child(x, pair);
        NodeId cur = x;
        int hops = 0;
        while (cur != want) {
          ShortcutId s = h_.hspace().get_down(cur, pair);
          AUDIT_CHECK(s != kNil, "broken (i,t)-chain");
          AUDIT_CHECK(h_.hspace().at(s).top == cur, "chain link top mismatch");
          cur = h_.hspace().at(s).bottom;
          AUDIT_CHECK(++hops <= 4 * h_.dmax() + 4, "chain does not terminate");
        }
      }
    }
  }

  NodeId descend_to_child(NodeId x, int pair) {
    NodeId cur = x;
    for (;;) {
      bool found = false;
      for (NodeId c : children_[cur]) {
        if (!subtree_has_pair(c, pair)) continue;
        AUDIT_CHECK(!found, "single-child walk hit a branching node");
        cur = c;
        found = true;
      }
      AUDIT_CHECK(found, "single-child node without (i,t)-content");
      if (h_.has_status(cur, pair)) return cur;
    }
  }

  bool subtree_has_pair(NodeId x, int pair) {
    if (h_.node(x).depth == h_.dmax())
      return h_.store().size(h_.node(x).vertex, pair) > 0;
    for (VertexId w : vertices_below_.at(x))
      if (h_.store().size(w, pair) > 0) return true;
    return false;
  }

  bool is_ancestor(NodeId a, NodeId b) {  // a proper-or-equal ancestor of b
    NodeId cur = b;
    while (h_.node(cur).depth > h_.node(a).depth) cur = h_.parent_of(cur);
    return cur == a;
  }

  void check_shortcut_wellformed() {
    h_.hspace().for_each_live([&](ShortcutId, const ShortcutSpace<Hierarchy>::Rec& r) {
      AUDIT_CHECK(!h_.node(r.top).freed && !h_.node(r.bottom).freed,
                  "shortcut endpoint is a freed node");
      AUDIT_CHECK(is_ancestor(r.top, r.bottom) && r.top != r.bottom,
                  "shortcut endpoints are not ancestor/descendant");
      int p = std::min(ShortcutSpace<Hierarchy>::lsb_index(h_.level(r.top)),
                       ShortcutSpace<Hierarchy>::lsb_index(h_.level(r.bottom)));
      AUDIT_CHECK(p == r.power, "stored power mismatch");
      for (NodeId x = h_.parent_of(r.bottom); x != r.top; x = h_.parent_of(x))
        AUDIT_CHECK(ShortcutSpace<Hierarchy>::lsb_index(h_.level(x)) < p,
                    "ineligible shortcut: interior LSB too large");
      if (r.power > 0) {
        AUDIT_CHECK(r.cov_left != kNil && r.cov_right != kNil, "covering pair missing");
        AUDIT_CHECK(h_.hspace().at(r.cov_left).top == r.top &&
                        h_.hspace().at(r.cov_left).bottom == h_.hspace().at(r.cov_right).top &&
                        h_.hspace().at(r.cov_right).bottom == r.bottom,
                    "covered pair does not partition the span");
      }
      for (PairSet m = r.membership; m;) {
        int pair = __builtin_ctzll(m);
        m &= m - 1;
        AUDIT_CHECK(h_.hspace().get_down(r.top, pair) != kNil, "membership without DownIdx");
        AUDIT_CHECK(h_.hspace().get_up(r.bottom, pair) != kNil, "membership without UpIdx");
      }
    });
  }

  void check_non_crossing() {
    std::vector<std::pair<NodeId, NodeId>> spans;
    h_.hspace().for_each_live([&](ShortcutId, const ShortcutSpace<Hierarchy>::Rec& r) {
      spans.emplace_back(r.top, r.bottom);
    });
    for (std::size_t a = 0; a < spans.size(); ++a) {
      for (std::size_t b = 0; b < spans.size(); ++b) {
        if (a == b) continue;
        auto [t1, b1] = spans[a];
        auto [t2, b2] = spans[b];
        if (h_.node(t1).depth >= h_.node(t2).depth) continue;
        // crossing: t1 above t2, t2 strictly inside span1, b2 strictly below b1
        if (is_ancestor(t1, t2) && t2 != t1 && is_ancestor(t2, b1) && t2 != b1 &&
            is_ancestor(b1, b2) && b1 != b2)
          AUDIT_CHECK(false, "crossing shortcuts");
      }
    }
  }

  void check_counter_precision() {
    double eps = 1.0 / (std::log2(static_cast<double>(h_.n())) *
                        std::log2(static_cast<double>(h_.n())));
    int ll = std::max(1, ceil_log2(std::max(2, floor_log2(h_.n()))));
    for (NodeId x : live_) {
      const HierarchyNode& nd = h_.node(x);
      for (int i = 1; i <= h_.dmax(); ++i) {
        int pair = pair_index(i, EndpointType::Primary);
        if (!(nd.is_node >> pair & 1)) continue;
        std::uint64_t exact = 0;
        for (VertexId w : vertices_below_.at(x)) exact += h_.store().size(w, pair);
        std::uint64_t approx = CounterLayout::decode(nd.counters.get(h_.layout(), i));
        AUDIT_CHECK(approx <= exact,
                    "approximate counter exceeds the exact count (node " + std::to_string(x) +
                        " depth " + std::to_string(nd.depth) + " i=" + std::to_string(i) +
                        " approx=" + std::to_string(approx) + " exact=" + std::to_string(exact) +
                        ")");
        double H = static_cast<double>(h_.dmax() - nd.depth) * eng_.config().c_H * ll +
                   floor_log2(std::max<std::uint64_t>(nd.weight, 1));
        double lower = std::pow(1.0 - eps, H + 1) * static_cast<double>(exact);
        AUDIT_CHECK(static_cast<double>(approx) >= lower,
                    "approximate counter below the precision band");
      }
    }
  }

  void check_storage_bound() {
    int ll = std::max(1, ceil_log2(std::max(2, floor_log2(h_.n()))));
    std::size_t bound = 4u * (3u * h_.dmax() + 2u) * (2u * ll + 2u);
    for (VertexId w = 0; w < h_.n(); ++w) {
      if (!h_.materialized(w)) continue;
      std::set<NodeId> path;
      for (NodeId cur = h_.leaf_of(w); cur != kNil; cur = h_.parent_of(cur)) path.insert(cur);
      std::size_t count = 0;
      h_.hspace().for_each_live([&](ShortcutId, const ShortcutSpace<Hierarchy>::Rec& r) {
        if (path.count(r.top) || path.count(r.bottom)) ++count;
      });
      AUDIT_CHECK(count <= bound, "per-path shortcut storage bound exceeded");
    }
  }

  void check_local_trees() {
    for (NodeId x : live_) {
      const HierarchyNode& nd = h_.node(x);
      if (!nd.ltree) continue;
      h_.lf().audit_tree(*nd.ltree, x);
      // Invariant on bottom trees: status, weight and counters never grew
      // since the last audit (keyed by node id + generation).
      auto visit_bottom = [&](auto&& self, LocalId l) -> void {
        const LocalNode& n = h_.lf().node(l);
        if (n.kind != LKind::Bottom && n.kind != LKind::Leaf) {
          return;
        }
        if (n.kind == LKind::Bottom) {
          auto key = std::make_pair(l, n.gen);
          auto it = eng_.bottom_shadow_.find(key);
          Engine::BottomShadowEntry cur;
          cur.status = n.status;
          cur.weight = n.weight;
          cur.counters.resize(h_.dmax() + 1, 0);
          for (int i = 1; i <= h_.dmax(); ++i)
            cur.counters[i] = CounterLayout::decode(n.counters.get(h_.layout(), i));
          if (it != eng_.bottom_shadow_.end()) {
            AUDIT_CHECK((cur.status & ~it->second.status) == 0,
                        "bottom node gained (i,t)-status");
            AUDIT_CHECK(cur.weight <= it->second.weight, "bottom node gained weight");
            for (int i = 1; i <= h_.dmax(); ++i)
              AUDIT_CHECK(cur.counters[i] <= it->second.counters[i],
                          "bottom node counter increased");
          }
          eng_.bottom_shadow_[key] = std::move(cur);
          if (n.left != kNil) self(self, n.left);
          if (n.right != kNil) self(self, n.right);
        }
      };
      for (LocalId r : nd.ltree->middle_roots) {
        // descend through middles to bottom roots
        std::vector<LocalId> stack{r};
        while (!stack.empty()) {
          LocalId y = stack.back();
          stack.pop_back();
          if (h_.lf().node(y).kind == LKind::Middle) {
            stack.push_back(h_.lf().node(y).left);
            stack.push_back(h_.lf().node(y).right);
          } else if (h_.lf().node(y).kind == LKind::Bottom) {
            visit_bottom(visit_bottom, y);
          }
        }
      }
    }
  }
};

#undef AUDIT_CHECK

}  // namespace

AuditReport Engine::validate(AuditLevel level) {
  AuditReport rep;
  if (level == AuditLevel::Off) return rep;
  try {
    Auditor a(*this);
    a.run(level);
  } catch (const Failure& f) {
    rep.ok = false;
    rep.first_violation = f.what;
  } catch (const Error& e) {
    rep.ok = false;
    rep.first_violation = e.what();
  }
  return rep;
}

}  // namespace dynconn
