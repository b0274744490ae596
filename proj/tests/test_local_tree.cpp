#include <map>
#include <set>

#include "doctest.h"
#include "dynconn/local_tree.hpp"

using namespace dynconn;

namespace {

struct Fx {
  CounterLayout layout;
  LocalForest lf;
  LocalForest::Tree t;
  NodeId owner = 1000;
  std::map<NodeId, LocalId> rep;
  NodeId next_child = 0;

  explicit Fx(std::uint64_t n = 64, std::uint64_t buffer_cap = 0, std::uint32_t top_cap = 12)
      : layout(CounterLayout::make(n)), lf(layout, buffer_cap, top_cap) {}

  NodeId add(std::uint64_t weight = 1) {
    NodeId c = next_child++;
    rep[c] = lf.add_child(t, owner, c, weight);
    // relocations and conversions can move the leaf but ids are stable
    return c;
  }
  void del(NodeId c) {
    lf.delete_child(t, owner, rep[c]);
    rep.erase(c);
  }
  std::set<NodeId> brute_marked(int pair) const {
    std::set<NodeId> out;
    lf.for_each_leaf(t, [&](LocalId l) {
      if (lf.node(l).status >> pair & 1) out.insert(lf.node(l).child);
    });
    return out;
  }
  std::set<NodeId> enumerated(int pair) {
    std::set<NodeId> out;
    lf.enumerate_status(t, pair, [&](LocalId l) { out.insert(lf.node(l).child); });
    return out;
  }
};

}  // namespace

TEST_CASE("add to empty tree makes a single buffer leaf") {
  Fx f;
  NodeId c = f.add(5);
  CHECK(f.lf.root_weight(f.t) == 5);
  CHECK(f.t.buffer_leaves == 1);
  CHECK(f.t.middle_roots.empty());
  CHECK(f.lf.owner_of(f.rep[c]) == f.owner);
  f.lf.audit_tree(f.t, f.owner);
}

TEST_CASE("buffer converts to a bottom tree at capacity") {
  Fx f(64, 4);
  for (int i = 0; i < 3; ++i) f.add();
  CHECK(f.t.buffer_leaves == 3);
  CHECK(f.t.middle_roots.empty());
  f.add();  // 4th leaf: conversion
  CHECK(f.t.buffer_leaves == 0);
  REQUIRE(f.t.middle_roots.size() == 1);
  CHECK(f.lf.node(f.t.middle_roots[0]).kind == LKind::Bottom);
  CHECK(f.lf.node(f.t.middle_roots[0]).rank == 2);  // weight 4
  CHECK(f.lf.root_weight(f.t) == 4);
  f.lf.audit_tree(f.t, f.owner);
}

TEST_CASE("weights at buffer ancestors reflect every insertion") {
  Fx f;
  std::uint64_t total = 0;
  for (int i = 1; i <= 9; ++i) {
    f.add(i);
    total += i;
    CHECK(f.lf.root_weight(f.t) == total);
    f.lf.audit_tree(f.t, f.owner);
  }
}

TEST_CASE("status add / remove / enumerate with relocation out of bottoms") {
  Fx f(64, 3);
  NodeId a = f.add(), b = f.add(), c = f.add();  // converts at 3
  REQUIRE(f.t.middle_roots.size() == 1);
  int pw = pair_index(2, EndpointType::Witness);
  // Adding status to a bottom leaf relocates it to the buffer (bottom loses a node).
  f.lf.leaf_add_status(f.t, f.owner, f.rep[a], pw);
  CHECK(f.t.buffer_leaves == 1);
  CHECK(f.lf.root_status(f.t) == pair_bit(2, EndpointType::Witness));
  CHECK(f.enumerated(pw) == f.brute_marked(pw));
  CHECK(f.enumerated(pw) == std::set<NodeId>{a});
  // Unique leaf logic.
  CHECK(f.lf.unique_status_leaf(f.t, pw) == f.rep[a]);
  f.lf.leaf_add_status(f.t, f.owner, f.rep[b], pw);
  CHECK(f.lf.unique_status_leaf(f.t, pw) == kNil);
  CHECK(f.enumerated(pw) == std::set<NodeId>{a, b});
  // Remove: bitmap clears when the last marked leaf goes.
  f.lf.leaf_remove_status(f.t, f.owner, f.rep[a], pw);
  f.lf.leaf_remove_status(f.t, f.owner, f.rep[b], pw);
  CHECK(f.lf.root_status(f.t) == 0);
  CHECK(f.enumerated(pw).empty());
  CHECK_THROWS_AS(f.lf.leaf_remove_status(f.t, f.owner, f.rep[c], pw), Error);
  f.lf.audit_tree(f.t, f.owner);
}

TEST_CASE("merge sums weights and joins buffers") {
  Fx f;
  f.add(3);
  LocalForest::Tree other;
  LocalId l = f.lf.add_child(other, 2000, 77, 4);
  (void)l;
  f.lf.merge(f.t, f.owner, other);
  CHECK(f.lf.root_weight(f.t) == 7);
  CHECK(f.t.buffer_leaves == 2);
  f.lf.audit_tree(f.t, f.owner);
}

TEST_CASE("joining procedure runs at the top threshold and pairs equal ranks") {
  Fx f(64, 1, 6);  // every child becomes its own bottom tree; join at 6 roots
  for (int i = 0; i < 6; ++i) f.add(1);
  // 6 rank-0 roots joined pairwise: 3 rank-1, then one more join: 1 rank-2 + 1 rank-1.
  std::multiset<int> ranks;
  for (LocalId r : f.t.middle_roots) ranks.insert(f.lf.node(r).rank);
  CHECK(f.t.middle_roots.size() < 6);
  // After joining, at most one root per rank.
  std::set<int> uniq(ranks.begin(), ranks.end());
  CHECK(uniq.size() == ranks.size());
  CHECK(f.lf.root_weight(f.t) == 6);
  f.lf.audit_tree(f.t, f.owner);
}

TEST_CASE("bottom leaf deletion with rank drop dismantles the middle path") {
  Fx f(64, 1, 4);
  std::vector<NodeId> cs;
  for (int i = 0; i < 8; ++i) cs.push_back(f.add(1));
  f.lf.audit_tree(f.t, f.owner);
  // Delete children one by one; audits keep ranks/weights consistent.
  for (NodeId c : cs) {
    f.del(c);
    f.lf.audit_tree(f.t, f.owner);
  }
  CHECK(f.lf.root_weight(f.t) == 0);
  CHECK(f.t.middle_roots.empty());
  CHECK(f.t.buffer_root == kNil);
}

TEST_CASE("delete from buffer leaves middles untouched") {
  Fx f(64, 3);
  f.add();
  f.add();
  f.add();  // bottom formed
  NodeId d = f.add();
  auto roots = f.t.middle_roots;
  f.del(d);
  CHECK(f.t.middle_roots == roots);
  f.lf.audit_tree(f.t, f.owner);
}

TEST_CASE("status removal from a middle leaf leaves a trivial shortcut to the survivor") {
  Fx f(64, 1, 4);  // single-leaf bottoms, joins at 4 roots
  NodeId a = f.add(1), b = f.add(1), c = f.add(1), d = f.add(1);
  (void)c;
  (void)d;
  int pp = pair_index(1, EndpointType::Secondary);
  // Mark two children whose bottoms sit under one middle node after joining.
  // Marking relocates to the buffer; push them back by adding more children.
  f.lf.leaf_add_status(f.t, f.owner, f.rep[a], pp);
  f.lf.leaf_add_status(f.t, f.owner, f.rep[b], pp);
  CHECK(f.enumerated(pp) == std::set<NodeId>{a, b});
  f.lf.audit_tree(f.t, f.owner);
  // Remove one: the other must still be reachable through the local tree.
  f.lf.leaf_remove_status(f.t, f.owner, f.rep[a], pp);
  CHECK(f.enumerated(pp) == std::set<NodeId>{b});
  CHECK(f.lf.unique_status_leaf(f.t, pp) == f.rep[b]);
  f.lf.audit_tree(f.t, f.owner);
}

TEST_CASE("enumerate matches brute scan under churn") {
  Rng rng(5);
  Fx f(64, 2, 4);
  std::vector<NodeId> live;
  std::vector<int> pairs{pair_index(1, EndpointType::Witness),
                         pair_index(2, EndpointType::Primary),
                         pair_index(3, EndpointType::Secondary)};
  for (int step = 0; step < 400; ++step) {
    int op = static_cast<int>(rng.bounded(5));
    if (op <= 1 || live.empty()) {
      live.push_back(f.add(1 + rng.bounded(3)));
    } else if (op == 2) {
      NodeId c = live[rng.bounded(live.size())];
      int pair = pairs[rng.bounded(pairs.size())];
      std::uint64_t cnt = pair_type(pair) == EndpointType::Primary ? rng.bounded(10) : 0;
      f.lf.leaf_add_status(f.t, f.owner, f.rep[c], pair, cnt);
    } else if (op == 3) {
      NodeId c = live[rng.bounded(live.size())];
      int pair = pairs[rng.bounded(pairs.size())];
      if (f.lf.node(f.rep[c]).status >> pair & 1)
        f.lf.leaf_remove_status(f.t, f.owner, f.rep[c], pair);
    } else {
      std::size_t i = rng.bounded(live.size());
      f.del(live[i]);
      live.erase(live.begin() + i);
    }
    if (step % 7 == 0) {
      f.lf.audit_tree(f.t, f.owner);
      for (int pair : pairs) REQUIRE(f.enumerated(pair) == f.brute_marked(pair));
    }
  }
}

TEST_CASE("sampling follows counters; zero-count children never selected") {
  Fx f;
  NodeId a = f.add(), b = f.add(), z = f.add();
  int depth = 2;
  int pp = pair_index(depth, EndpointType::Primary);
  f.lf.leaf_add_status(f.t, f.owner, f.rep[a], pp, 1);
  f.lf.leaf_add_status(f.t, f.owner, f.rep[b], pp, 3);
  f.lf.leaf_add_status(f.t, f.owner, f.rep[z], pp, 0);
  Rng rng(99);
  int ca = 0, cb = 0;
  const int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i) {
    LocalId l = f.lf.sample_primary_child(f.t, depth, rng);
    NodeId c = f.lf.node(l).child;
    REQUIRE(c != z);
    (c == a ? ca : cb)++;
  }
  // Exact counters 1 and 3: expect 0.25/0.75 within +-0.02.
  CHECK(ca > kDraws * 0.23);
  CHECK(ca < kDraws * 0.27);
  CHECK(cb > kDraws * 0.73);
  CHECK(cb < kDraws * 0.77);
}

TEST_CASE("root counter is the fold of marked leaves") {
  Fx f(64, 2, 4);
  int depth = 1;
  int pp = pair_index(depth, EndpointType::Primary);
  std::uint64_t sum = 0;
  for (int i = 0; i < 10; ++i) {
    NodeId c = f.add();
    f.lf.leaf_add_status(f.t, f.owner, f.rep[c], pp, i);
    sum += i;
  }
  auto got = CounterLayout::decode(f.lf.root_counter(f.t, depth));
  // Counters only round down, and each fold loses < 1/(log n)^2 relatively.
  CHECK(got <= sum);
  CHECK(static_cast<double>(got) >= 0.9 * static_cast<double>(sum));
  // Counter updates propagate.
  NodeId c = f.add();
  f.lf.leaf_add_status(f.t, f.owner, f.rep[c], pp, 0);
  f.lf.leaf_set_counter(f.t, f.owner, f.rep[c], depth, 100);
  auto got2 = CounterLayout::decode(f.lf.root_counter(f.t, depth));
  CHECK(got2 > got);
  CHECK(got2 <= sum + 100);
  f.lf.audit_tree(f.t, f.owner);
}

TEST_CASE("empty pool sampling throws") {
  Fx f;
  f.add();
  Rng rng(1);
  CHECK_THROWS_AS(f.lf.sample_primary_child(f.t, 1, rng), Error);
}
