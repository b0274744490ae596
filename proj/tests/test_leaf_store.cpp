#include <map>

#include "doctest.h"
#include "dynconn/leaf_store.hpp"

using namespace dynconn;

TEST_CASE("insert / enumerate / remove") {
  LeafStore s(4);
  int p = pair_index(1, EndpointType::Secondary);
  auto slot = s.insert(0, p, 10);
  CHECK(slot == 0);
  auto e = s.enumerate(0, p);
  REQUIRE(e.size() == 1);
  CHECK(e[0] == 10);
  CHECK(s.remove(0, p, slot) == kNil);
  CHECK(s.enumerate(0, p).empty());

  // Two inserts at the same (v, i, t) both enumerate.
  auto s1 = s.insert(0, p, 10);
  auto s2 = s.insert(0, p, 11);
  (void)s1;
  (void)s2;
  auto e2 = s.enumerate(0, p);
  REQUIRE(e2.size() == 2);
  CHECK(((e2[0] == 10 && e2[1] == 11) || (e2[0] == 11 && e2[1] == 10)));
}

TEST_CASE("swap-remove reports the moved edge") {
  LeafStore s(2);
  int p = pair_index(2, EndpointType::Primary);
  s.insert(1, p, 7);   // slot 0
  s.insert(1, p, 8);   // slot 1
  s.insert(1, p, 9);   // slot 2
  EdgeId moved = s.remove(1, p, 1);  // remove middle
  CHECK(moved == 9);                 // 9 moved into slot 1
  auto e = s.enumerate(1, p);
  REQUIRE(e.size() == 2);
  CHECK(e[0] == 7);
  CHECK(e[1] == 9);
  CHECK(s.remove(1, p, 1) == kNil);  // remove last
  CHECK(s.size(1, p) == 1);
  s.insert(1, p, 9);
  CHECK(s.size(1, p) == 2);
}

TEST_CASE("pairs never mix") {
  LeafStore s(2);
  int a = pair_index(2, EndpointType::Primary);
  int b = pair_index(2, EndpointType::Secondary);
  s.insert(0, a, 1);
  s.insert(0, b, 2);
  REQUIRE(s.enumerate(0, a).size() == 1);
  CHECK(s.enumerate(0, a)[0] == 1);
  REQUIRE(s.enumerate(0, b).size() == 1);
  CHECK(s.enumerate(0, b)[0] == 2);
  CHECK(s.occupied(0) == ((PairSet{1} << a) | (PairSet{1} << b)));
}

TEST_CASE("uniform sampling") {
  LeafStore s(1);
  int p = pair_index(1, EndpointType::Primary);
  Rng rng(42);
  CHECK_THROWS_AS(s.sample_uniform(0, p, rng), Error);
  s.insert(0, p, 5);
  for (int i = 0; i < 10; ++i) CHECK(s.sample_uniform(0, p, rng) == 5);
  s.insert(0, p, 6);
  // Two elements, 1e5 seeded draws: each frequency within [0.48, 0.52].
  // Binomial tail below 1e-9 at this margin.
  int c5 = 0;
  const int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i)
    if (s.sample_uniform(0, p, rng) == 5) ++c5;
  CHECK(c5 >= 48000);
  CHECK(c5 <= 52000);
}

TEST_CASE("exact uniformity over a fixed store") {
  // Rejection sampling over 3 elements: every accepted draw maps a uniform
  // word to index r % 3 with the biased prefix discarded; exhaust a seeded
  // stream and check exact proportions via a chi-square-free exact bound.
  LeafStore s(1);
  int p = pair_index(1, EndpointType::Witness);
  s.insert(0, p, 0);
  s.insert(0, p, 1);
  s.insert(0, p, 2);
  Rng rng(1234);
  int cnt[3] = {0, 0, 0};
  for (int i = 0; i < 90000; ++i) ++cnt[s.sample_uniform(0, p, rng)];
  for (int k = 0; k < 3; ++k) {
    CHECK(cnt[k] > 29000);
    CHECK(cnt[k] < 31000);
  }
}
