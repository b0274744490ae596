#include <set>
#include <vector>

#include "doctest.h"
#include "dynconn/rng.hpp"
#include "dynconn/shortcuts.hpp"

using namespace dynconn;

namespace {

// A bare ancestor-descendant path: ref i sits at depth depth0+i.
struct MockHost {
  int depth0 = 0;
  std::vector<NodeShortcutState> st;
  int level(std::uint32_t r) const { return depth0 + static_cast<int>(r) + 1; }
  NodeShortcutState& sstate(std::uint32_t r) { return st[r]; }
  const NodeShortcutState* sstate_if(std::uint32_t r) const { return &st[r]; }
};

using Space = ShortcutSpace<MockHost>;

struct Fixture {
  MockHost host;
  Space space;
  Fixture(int depth0, int count, int dmax = 21) : space(host, dmax) {
    host.depth0 = depth0;
    host.st.resize(count);
  }
  // Lay down the fundamental chain for `pair` over the whole path.
  void fundamentals(int pair) {
    for (std::uint32_t i = 0; i + 1 < host.st.size(); ++i) {
      ShortcutId s = space.get_or_create(i, i + 1);
      space.add_membership(s, PairSet{1} << pair);
    }
  }
  // Stored chain for `pair` from ref 0, as (depth_top, depth_bottom) pairs.
  std::vector<std::pair<int, int>> chain(int pair) {
    std::vector<std::pair<int, int>> out;
    space.walk_down(0, pair, [&](ShortcutId s, std::uint32_t) {
      const auto& r = space.at(s);
      out.emplace_back(host.level(r.top) - 1, host.level(r.bottom) - 1);
    });
    return out;
  }
};

}  // namespace

TEST_CASE("lsb_index") {
  CHECK(Space::lsb_index(1) == 0);
  CHECK(Space::lsb_index(8) == 3);
  CHECK(Space::lsb_index(12) == 2);
  CHECK_THROWS_AS(Space::lsb_index(0), Error);
}

TEST_CASE("power formula") {
  Fixture f(2, 2);  // depths 2,3
  CHECK(f.space.power_of(0, 1) == 0);
  Fixture g(5, 5);  // depths 5..9
  CHECK(g.space.power_of(0, 4) == 1);  // min(lsb 6, lsb 10)
  Fixture h(7, 9);  // depths 7..15
  CHECK(h.space.power_of(0, 8) == 3);  // min(lsb 8, lsb 16)
}

TEST_CASE("single fundamental traversal covers nothing") {
  Fixture f(4, 2);
  f.fundamentals(0);
  auto before = f.space.live_count();
  CHECK(f.space.traverse_down(0, 0) == 1);
  CHECK(f.space.live_count() == before);
  CHECK(f.chain(0) == std::vector<std::pair<int, int>>{{4, 5}});
}

TEST_CASE("chain of fundamentals depths 5..14 covers to the maximal set") {
  Fixture f(5, 10);
  f.fundamentals(3);
  CHECK(f.space.traverse_down(0, 3) == 9);
  std::vector<std::pair<int, int>> want{{5, 7}, {7, 11}, {11, 13}, {13, 14}};
  CHECK(f.chain(3) == want);
  // Matches the brute-force maximal covering oracle (levels are depth+1).
  auto oracle = maximal_cover_oracle(6, 15);
  for (auto& [a, b] : oracle) {
    a -= 1;
    b -= 1;
  }
  CHECK(f.chain(3) == oracle);
  // Second traversal: idempotent, no new shortcuts.
  auto live = f.space.live_count();
  CHECK(f.space.traverse_down(0, 3) == 9);
  CHECK(f.space.live_count() == live);
  CHECK(f.chain(3) == want);
}

TEST_CASE("traversal equals oracle on random segments") {
  Rng rng(2024);
  for (int trial = 0; trial < 400; ++trial) {
    int d0 = static_cast<int>(rng.bounded(40));
    int len = 1 + static_cast<int>(rng.bounded(40));
    Fixture f(d0, len + 1, 63);
    f.fundamentals(1);
    CHECK(f.space.traverse_down(0, 1) == static_cast<std::uint32_t>(len));
    auto oracle = maximal_cover_oracle(d0 + 1, d0 + len + 1);
    for (auto& [a, b] : oracle) {
      a -= 1;
      b -= 1;
    }
    REQUIRE(f.chain(1) == oracle);
    // Size bound |ShortCuts| <= 2*ceil(log2 log2 n): levels stay below 2^6
    // here, so the bound is 12. Consecutive endpoints must chain.
    auto ch = f.chain(1);
    CHECK(ch.size() <= 12);
    for (std::size_t i = 0; i + 1 < ch.size(); ++i) REQUIRE(ch[i].second == ch[i + 1].first);
    CHECK(ch.front().first == d0);
    CHECK(ch.back().second == d0 + len);
  }
}

TEST_CASE("membership sharing and uncover inverse") {
  Fixture f(5, 3);  // depths 5,6,7
  int p1 = 2, p2 = 7;
  f.fundamentals(p1);
  f.fundamentals(p2);
  f.space.traverse_down(0, p1);
  // Depths 5..7: levels 6..8: eligible top shortcut (6,8) power 1.
  auto c1 = f.chain(p1);
  CHECK(c1 == std::vector<std::pair<int, int>>{{5, 7}});
  // Second pair covers onto the same shared record.
  auto live = f.space.live_count();
  f.space.traverse_down(0, p2);
  CHECK(f.space.live_count() == live);  // reused, nothing new
  ShortcutId sd1 = f.space.get_down(0, p1);
  ShortcutId sd2 = f.space.get_down(0, p2);
  CHECK(sd1 == sd2);
  CHECK(f.space.get_up(2, p1) == sd1);
  // Uncover p1: covered pair regains membership; p2 untouched.
  auto [a, b] = f.space.uncover(sd1, p1);
  CHECK(f.space.at(a).membership == (PairSet{1} << p1));
  CHECK(f.space.at(b).membership == (PairSet{1} << p1));
  CHECK((f.space.at(sd1).membership >> p2 & 1) == 1);
  CHECK((f.space.at(sd1).membership >> p1 & 1) == 0);
  CHECK(f.chain(p1) == std::vector<std::pair<int, int>>{{5, 6}, {6, 7}});
  // Cover back by traversal: membership restored.
  f.space.traverse_down(0, p1);
  CHECK(f.chain(p1) == std::vector<std::pair<int, int>>{{5, 7}});
  CHECK(f.space.get_down(0, p1) == sd1);
}

TEST_CASE("uncover of fundamental is a contract error") {
  Fixture f(4, 2);
  f.fundamentals(0);
  ShortcutId s = f.space.get_down(0, 0);
  CHECK_THROWS_AS(f.space.uncover(s, 0), Error);
}

TEST_CASE("fresh node lookups return nothing") {
  Fixture f(3, 4);
  CHECK(f.space.get_down(0, 5) == kNil);
  CHECK(f.space.get_up(3, 5) == kNil);
}

TEST_CASE("clearing all membership garbage-collects unreachable records") {
  Fixture f(5, 10);
  f.fundamentals(0);
  f.space.traverse_down(0, 0);
  std::size_t covered_live = f.space.live_count();
  CHECK(covered_live > 4);  // 4 chain links + supporting fundamentals
  // Remove the pair everywhere, top-power first (as a teardown would).
  for (;;) {
    ShortcutId s = f.space.get_down(0, 0);
    if (s == kNil) break;
    // walk the chain, clearing from the deepest end back
    std::vector<ShortcutId> links;
    f.space.walk_down(0, 0, [&](ShortcutId id, std::uint32_t) { links.push_back(id); });
    for (ShortcutId id : links) f.space.remove_membership(id, PairSet{1} << 0);
  }
  CHECK(f.space.live_count() == 0);
}

TEST_CASE("non-crossing holds for every stored pair after traversals") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    int len = 2 + static_cast<int>(rng.bounded(30));
    Fixture f(static_cast<int>(rng.bounded(20)), len + 1, 63);
    for (int pair = 0; pair < 6; ++pair) f.fundamentals(pair);
    for (int pair = 0; pair < 6; ++pair) f.space.traverse_down(0, pair);
    std::vector<std::pair<int, int>> spans;
    f.space.for_each_live([&](ShortcutId, const Space::Rec& r) {
      spans.emplace_back(r.top, r.bottom);
    });
    for (auto [a1, b1] : spans)
      for (auto [a2, b2] : spans)
        if (a1 < a2)  // properly interleaved = crossing
          REQUIRE(!(a2 < b1 && b1 < b2));
  }
}
