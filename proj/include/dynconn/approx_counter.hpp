#pragma once

#include <cstring>
#include <memory>

#include "dynconn/common.hpp"

namespace dynconn {

// Floating under-approximation of a count: value = mantissa * 2^exponent.
// Canonical form: exponent == 0 or the mantissa's top bit is set.
struct ApproxCounter {
  std::uint32_t mantissa = 0;
  std::uint32_t exponent = 0;
  bool operator==(const ApproxCounter& o) const {
    return mantissa == o.mantissa && exponent == o.exponent;
  }
};

// Field widths derived from n. The mantissa carries one bit beyond
// beta*ceil(log2 log2 n): with 2^(M-1) >= (log2 n)^2 the truncation error of
// a single round-down stays strictly under log2(n)^-2, which the boxplus
// bound needs even when log2 n is itself a power of two.
struct CounterLayout {
  int mantissa_bits = 0;
  int exponent_bits = 0;
  int field_bits = 0;
  int dmax = 0;            // packed slots, one per edge depth
  int fields_per_word = 0;
  int words = 0;

  static constexpr int kBeta = 2;

  static CounterLayout make(std::uint64_t n) {
    CounterLayout L;
    int lg = floor_log2(n);
    int ceil_lg = lg + (((n & (n - 1)) != 0) ? 1 : 0);
    int ll = ceil_log2(static_cast<std::uint64_t>(ceil_lg));
    L.mantissa_bits = std::max(4, kBeta * ll + 1);
    L.exponent_bits = std::max(3, ll + 1);
    L.field_bits = L.mantissa_bits + L.exponent_bits;
    L.dmax = std::max(1, lg);
    L.fields_per_word = 64 / L.field_bits;
    L.words = (L.dmax + L.fields_per_word - 1) / L.fields_per_word;
    return L;
  }

  std::uint64_t max_exponent() const { return (std::uint64_t{1} << exponent_bits) - 1; }
  std::uint64_t mantissa_mask() const { return (std::uint64_t{1} << mantissa_bits) - 1; }

  ApproxCounter encode(std::uint64_t value) const {
    if (value < (std::uint64_t{1} << mantissa_bits))
      return ApproxCounter{static_cast<std::uint32_t>(value), 0};
    int bits = floor_log2(value) + 1;
    int e = bits - mantissa_bits;
    if (static_cast<std::uint64_t>(e) > max_exponent())
      raise(Errc::Range, "counter value out of representable range");
    return ApproxCounter{static_cast<std::uint32_t>(value >> e),
                         static_cast<std::uint32_t>(e)};
  }

  static std::uint64_t decode(ApproxCounter c) {
    return static_cast<std::uint64_t>(c.mantissa) << c.exponent;
  }

  // Round-down addition; not associative.
  ApproxCounter boxplus(ApproxCounter a, ApproxCounter b) const {
    return encode(decode(a) + decode(b));
  }

  std::uint64_t field_of(ApproxCounter c) const {
    return static_cast<std::uint64_t>(c.mantissa) |
           (static_cast<std::uint64_t>(c.exponent) << mantissa_bits);
  }
  ApproxCounter counter_of(std::uint64_t field) const {
    ApproxCounter c;
    c.mantissa = static_cast<std::uint32_t>(field & mantissa_mask());
    c.exponent = static_cast<std::uint32_t>(field >> mantissa_bits);
    return c;
  }
};

// d_max approximate counters packed into consecutive bit fields, fields never
// straddling a word. All-zero arrays stay unallocated.
class PackedCounters {
 public:
  PackedCounters() = default;
  PackedCounters(PackedCounters&&) noexcept = default;
  PackedCounters& operator=(PackedCounters&&) noexcept = default;

  bool allocated() const { return static_cast<bool>(words_); }

  void clear() { words_.reset(); }

  ApproxCounter get(const CounterLayout& L, int depth) const {
    check_depth(L, depth);
    if (!words_) return {};
    int slot = depth - 1;
    std::uint64_t w = words_[slot / L.fields_per_word];
    int off = (slot % L.fields_per_word) * L.field_bits;
    std::uint64_t field = (w >> off) & ((std::uint64_t{1} << L.field_bits) - 1);
    return L.counter_of(field);
  }

  void set(const CounterLayout& L, int depth, ApproxCounter c) {
    check_depth(L, depth);
    if (!words_) {
      if (c.mantissa == 0 && c.exponent == 0) return;
      ensure(L);
    }
    int slot = depth - 1;
    int off = (slot % L.fields_per_word) * L.field_bits;
    std::uint64_t mask = ((std::uint64_t{1} << L.field_bits) - 1) << off;
    std::uint64_t& w = words_[slot / L.fields_per_word];
    w = (w & ~mask) | (L.field_of(c) << off);
  }

  // Slot-wise boxplus of other into this. Whole words of zeros on the right
  // are skipped, so sparse adds touch only the occupied words.
  void add_from(const CounterLayout& L, const PackedCounters& other) {
    if (!other.words_) return;
    for (int wi = 0; wi < L.words; ++wi) {
      std::uint64_t bw = other.words_[wi];
      if (bw == 0) continue;
      if (!words_) ensure(L);
      int base = wi * L.fields_per_word;
      int limit = std::min(L.fields_per_word, L.dmax - base);
      for (int f = 0; f < limit; ++f) {
        int off = f * L.field_bits;
        std::uint64_t bfield = (bw >> off) & ((std::uint64_t{1} << L.field_bits) - 1);
        if (bfield == 0) continue;
        int depth = base + f + 1;
        set(L, depth, L.boxplus(get(L, depth), L.counter_of(bfield)));
      }
    }
  }

  PackedCounters clone(const CounterLayout& L) const {
    PackedCounters c;
    if (words_) {
      c.ensure(L);
      std::memcpy(c.words_.get(), words_.get(), sizeof(std::uint64_t) * L.words);
    }
    return c;
  }

  bool all_zero(const CounterLayout& L) const {
    if (!words_) return true;
    for (int i = 0; i < L.words; ++i)
      if (words_[i] != 0) return false;
    return true;
  }

 private:
  void ensure(const CounterLayout& L) {
    words_ = std::make_unique<std::uint64_t[]>(L.words);
    std::memset(words_.get(), 0, sizeof(std::uint64_t) * L.words);
  }
  static void check_depth(const CounterLayout& L, int depth) {
    if (depth < 1 || depth > L.dmax) raise(Errc::Range, "counter slot out of range");
  }

  std::unique_ptr<std::uint64_t[]> words_;
};

inline PackedCounters packed_add(const CounterLayout& L, const PackedCounters& a,
                                 const PackedCounters& b) {
  PackedCounters r = a.clone(L);
  r.add_from(L, b);
  return r;
}

}  // namespace dynconn
