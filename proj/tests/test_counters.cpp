#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "dynconn/approx_counter.hpp"
#include "dynconn/rng.hpp"

using namespace dynconn;

namespace {

// Independent truncation oracle: top M bits of the binary representation,
// exponent = number of truncated bits.
ApproxCounter truncate_oracle(std::uint64_t value, int mantissa_bits) {
  if (value == 0) return {0, 0};
  int bits = 64 - __builtin_clzll(value);
  int e = bits > mantissa_bits ? bits - mantissa_bits : 0;
  return {static_cast<std::uint32_t>(value >> e), static_cast<std::uint32_t>(e)};
}

// All distinct canonical counters whose value is <= cap.
std::vector<ApproxCounter> canonical_counters(const CounterLayout& L, std::uint64_t cap) {
  std::vector<ApproxCounter> out;
  for (std::uint64_t m = 0; m <= L.mantissa_mask(); ++m) {
    for (std::uint64_t e = 0; e <= L.max_exponent(); ++e) {
      if (e > 0 && (m >> (L.mantissa_bits - 1)) == 0) continue;  // canonical only
      std::uint64_t v = m << e;
      if ((m != 0 && (v >> e) != m) || v > cap) continue;
      out.push_back({static_cast<std::uint32_t>(m), static_cast<std::uint32_t>(e)});
    }
  }
  return out;
}

}  // namespace

TEST_CASE("layout widths at n=2^16") {
  auto L = CounterLayout::make(1u << 16);
  CHECK(L.mantissa_bits == 9);
  CHECK(L.exponent_bits == 5);
  CHECK(L.dmax == 16);
}

TEST_CASE("encode/decode basics") {
  auto L = CounterLayout::make(1u << 16);
  CHECK(L.encode(0) == ApproxCounter{0, 0});
  // Truncation oracle at the layout's width: 1000 = 0b1111101000 fits after
  // one truncated bit; still decodes exactly.
  auto c = L.encode(1000);
  CHECK(c == truncate_oracle(1000, L.mantissa_bits));
  CHECK(c == ApproxCounter{500, 1});
  CHECK(CounterLayout::decode(c) == 1000);
  auto c257 = L.encode(257);
  CHECK(c257 == truncate_oracle(257, L.mantissa_bits));
  CHECK(CounterLayout::decode(c257) == 257);
  // decode is width-agnostic m * 2^e.
  CHECK(CounterLayout::decode({250, 2}) == 1000);
  CHECK(CounterLayout::decode({255, 31}) == 255ull << 31);
}

TEST_CASE("encode rounds down within one ulp, exhaustive to 2^20") {
  auto L = CounterLayout::make(1u << 16);
  for (std::uint64_t v = 0; v <= (1u << 20); ++v) {
    auto c = L.encode(v);
    std::uint64_t d = CounterLayout::decode(c);
    CHECK(d <= v);
    CHECK(v < d + (std::uint64_t{1} << c.exponent));
    if (c.exponent > 0) CHECK((c.mantissa >> (L.mantissa_bits - 1)) == 1);  // canonical
  }
}

TEST_CASE("boxplus corollary bound, exhaustive over counters up to 2^16 at n=2^16") {
  auto L = CounterLayout::make(1u << 16);
  auto cs = canonical_counters(L, 1u << 16);
  // Every value <= 2^16 encodes to one of these, so this covers all pairs of
  // encodings of values <= 2^16.
  const double lo = 1.0 - 1.0 / 256.0;  // 1 - log2(n)^-2
  for (auto a : cs) {
    for (auto b : cs) {
      std::uint64_t sum = CounterLayout::decode(a) + CounterLayout::decode(b);
      std::uint64_t r = CounterLayout::decode(L.boxplus(a, b));
      REQUIRE(r <= sum);
      REQUIRE(static_cast<double>(r) >= lo * static_cast<double>(sum));
    }
  }
}

TEST_CASE("boxplus identity, exact small sums, commutative, monotone") {
  auto L = CounterLayout::make(1u << 16);
  auto a = L.encode(12345);
  CHECK(L.boxplus(a, {0, 0}) == a);
  // 255 + 2 fits the mantissa at this width: exact.
  CHECK(CounterLayout::decode(L.boxplus(L.encode(255), L.encode(2))) == 257);
  CHECK(L.boxplus(L.encode(3), L.encode(4)) == ApproxCounter{7, 0});
  Rng rng(7);
  for (int t = 0; t < 5000; ++t) {
    auto x = L.encode(rng.bounded(1u << 16));
    auto y = L.encode(rng.bounded(1u << 16));
    auto z = L.encode(rng.bounded(1u << 16));
    CHECK(L.boxplus(x, y) == L.boxplus(y, x));
    if (CounterLayout::decode(x) <= CounterLayout::decode(z))
      CHECK(CounterLayout::decode(L.boxplus(x, y)) <= CounterLayout::decode(L.boxplus(z, y)));
  }
}

TEST_CASE("boxplus bound holds for every supported n, sampled") {
  for (std::uint64_t n : {2ull, 3ull, 7ull, 16ull, 64ull, 100ull, 1024ull, 1ull << 16, 1ull << 20}) {
    auto L = CounterLayout::make(n);
    double lg = std::log2(static_cast<double>(n));
    double lo = 1.0 - 1.0 / (lg * lg);
    Rng rng(n);
    for (int t = 0; t < 20000; ++t) {
      std::uint64_t cap = n * n;
      auto a = L.encode(rng.bounded(cap / 2 + 1));
      auto b = L.encode(rng.bounded(cap / 2 + 1));
      std::uint64_t sum = CounterLayout::decode(a) + CounterLayout::decode(b);
      std::uint64_t r = CounterLayout::decode(L.boxplus(a, b));
      REQUIRE(r <= sum);
      REQUIRE(static_cast<double>(r) >= lo * static_cast<double>(sum));
    }
  }
}

TEST_CASE("packed get/set roundtrip and isolation") {
  auto L = CounterLayout::make(1u << 16);
  PackedCounters p;
  CHECK(p.get(L, 1) == ApproxCounter{0, 0});
  CHECK(p.get(L, L.dmax) == ApproxCounter{0, 0});
  p.set(L, 3, L.encode(999));
  p.set(L, 1, L.encode(7));
  CHECK(CounterLayout::decode(p.get(L, 3)) == CounterLayout::decode(L.encode(999)));
  CHECK(p.get(L, 1) == L.encode(7));
  for (int d = 2; d <= L.dmax; ++d)
    if (d != 3) CHECK(p.get(L, d) == ApproxCounter{0, 0});
  CHECK_THROWS_AS(p.get(L, 0), Error);
  CHECK_THROWS_AS(p.set(L, L.dmax + 1, {1, 0}), Error);
}

TEST_CASE("packed_add equals scalar boxplus slot-wise") {
  auto L = CounterLayout::make(1u << 16);
  Rng rng(99);
  for (int trial = 0; trial < 64; ++trial) {
    PackedCounters a, b;
    std::vector<std::uint64_t> va(L.dmax + 1, 0), vb(L.dmax + 1, 0);
    for (int d = 1; d <= L.dmax; ++d) {
      if (rng.bounded(3) == 0) {
        va[d] = rng.bounded(1u << 16);
        a.set(L, d, L.encode(va[d]));
      }
      if (rng.bounded(3) == 0) {
        vb[d] = rng.bounded(1u << 16);
        b.set(L, d, L.encode(vb[d]));
      }
    }
    PackedCounters r = packed_add(L, a, b);
    for (int d = 1; d <= L.dmax; ++d)
      CHECK(r.get(L, d) == L.boxplus(L.encode(va[d]), L.encode(vb[d])));
  }
  // Identity: adding an all-zero array changes nothing and allocates nothing.
  PackedCounters a, z;
  a.set(L, 5, L.encode(31));
  PackedCounters r = packed_add(L, a, z);
  CHECK(r.get(L, 5) == L.encode(31));
  CHECK(!z.allocated());
}

TEST_CASE("single nonzero slot add touches only that slot") {
  auto L = CounterLayout::make(1u << 16);
  PackedCounters a, b;
  for (int d = 1; d <= L.dmax; ++d) a.set(L, d, L.encode(d * 11));
  b.set(L, 4, L.encode(100));
  a.add_from(L, b);
  for (int d = 1; d <= L.dmax; ++d) {
    if (d == 4)
      CHECK(a.get(L, d) == L.boxplus(L.encode(44), L.encode(100)));
    else
      CHECK(a.get(L, d) == L.encode(d * 11));
  }
}

TEST_CASE("encode range error") {
  auto L = CounterLayout::make(4);  // tiny n, floored widths
  CHECK(L.mantissa_bits == 4);
  CHECK(L.exponent_bits == 3);
  CHECK_THROWS_AS(L.encode(std::uint64_t{1} << 40), Error);
}
