#pragma once

#include <array>
#include <vector>

#include "dynconn/common.hpp"

namespace dynconn {

// Packed fixed-width index fields, one per (i,t) pair; all-ones means absent.
// Lazily allocated: an empty vector reads as all-absent.
class PackedFields {
 public:
  PackedFields() = default;

  std::uint32_t get(int field_bits, int count, int idx) const {
    (void)count;
    std::uint32_t none = (1u << field_bits) - 1;
    if (words_.empty()) return none;
    int per = 64 / field_bits;
    std::uint64_t w = words_[idx / per];
    return static_cast<std::uint32_t>((w >> ((idx % per) * field_bits)) &
                                      ((std::uint64_t{1} << field_bits) - 1));
  }

  void set(int field_bits, int count, int idx, std::uint32_t value) {
    int per = 64 / field_bits;
    if (words_.empty()) words_.assign((count + per - 1) / per, ~std::uint64_t{0});
    std::uint64_t mask = ((std::uint64_t{1} << field_bits) - 1);
    std::uint64_t& w = words_[idx / per];
    int off = (idx % per) * field_bits;
    w = (w & ~(mask << off)) | (static_cast<std::uint64_t>(value & mask) << off);
  }

 private:
  std::vector<std::uint64_t> words_;
};

// Per-node shortcut stores: Down (slot array of all live downward (i,t)
// shortcuts with occupancy bitmap), DownIdx (pair -> slot), Up (at most one
// upward shortcut per power, supporting ones included), UpIdx (pair -> power).
struct NodeShortcutState {
  static constexpr int kMaxPowers = 8;
  std::uint64_t occupancy = 0;
  std::vector<ShortcutId> down;
  PackedFields down_idx;
  std::array<ShortcutId, kMaxPowers> up;
  PackedFields up_idx;

  NodeShortcutState() { up.fill(kNil); }
  bool empty() const {
    if (occupancy != 0) return false;
    for (ShortcutId s : up)
      if (s != kNil) return false;
    return true;
  }
};

// Brute-force largest covering set over a run of consecutive levels
// (level = depth+1 in the hierarchy, rank+1 in middle trees). Pure function
// of the two endpoint levels; used as the test oracle for traversals.
// Returns chained (level_top, level_bottom) pairs.
inline void maximal_cover_levels(int lu, int lv, std::vector<std::pair<int, int>>& out) {
  if (lu + 1 == lv) {
    out.emplace_back(lu, lv);
    return;
  }
  auto lsb = [](int x) { return __builtin_ctz(x); };
  int p = std::min(lsb(lu), lsb(lv));
  int best = -1, best_lsb = -1;
  bool eligible = true;
  for (int m = lu + 1; m < lv; ++m) {
    if (lsb(m) >= p) eligible = false;
    if (lsb(m) > best_lsb) {
      best_lsb = lsb(m);
      best = m;
    }
  }
  if (eligible) {
    out.emplace_back(lu, lv);
    return;
  }
  maximal_cover_levels(lu, best, out);
  maximal_cover_levels(best, lv, out);
}

inline std::vector<std::pair<int, int>> maximal_cover_oracle(int level_top, int level_bottom) {
  std::vector<std::pair<int, int>> out;
  if (level_top != level_bottom) maximal_cover_levels(level_top, level_bottom, out);
  return out;
}

// Shared shortcut store over an ancestor/descendant structure. Host supplies
// node levels and per-node state:
//   int level(Ref) const;                 // consecutive along paths, >= 1
//   NodeShortcutState& sstate(Ref);       // created on demand
//   const NodeShortcutState* sstate_if(Ref) const;
template <class Host>
class ShortcutSpace {
 public:
  using Ref = std::uint32_t;

  struct Rec {
    Ref top = kNil, bottom = kNil;
    std::uint8_t power = 0;
    std::uint8_t down_slot = 0xff;
    bool freed = false;
    ShortcutId cov_left = kNil, cov_right = kNil;  // power-1 pair (power > 0)
    // Number of stored records covering this one. A record can support one
    // coverer per branch below its bottom endpoint, so this is a count.
    std::uint32_t cover_refs = 0;
    PairSet membership = 0;
  };

  ShortcutSpace(Host& host, int dmax) : host_(host) {
    pair_count_ = 3 * dmax + 1;
    down_bits_ = std::max(ceil_log2(static_cast<std::uint64_t>(pair_count_) + 1),
                          ceil_log2(static_cast<std::uint64_t>(dmax) + 1) + 2);
    up_bits_ = 4;
  }

  const Rec& at(ShortcutId s) const { return pool_[s]; }
  std::size_t live_count() const { return live_; }
  int pair_count() const { return pair_count_; }

  static int lsb_index(std::uint64_t level) {
    if (level == 0) raise(Errc::Contract, "lsb_index of zero");
    return __builtin_ctzll(level);
  }
  int power_of(Ref u, Ref v) const {
    return std::min(lsb_index(host_.level(u)), lsb_index(host_.level(v)));
  }

  ShortcutId get_down(Ref u, int pair) const {
    const NodeShortcutState* st = host_.sstate_if(u);
    if (!st) return kNil;
    std::uint32_t slot = st->down_idx.get(down_bits_, pair_count_, pair);
    if (slot == (1u << down_bits_) - 1) return kNil;
    return st->down[slot];
  }

  ShortcutId get_up(Ref v, int pair) const {
    const NodeShortcutState* st = host_.sstate_if(v);
    if (!st) return kNil;
    std::uint32_t p = st->up_idx.get(up_bits_, pair_count_, pair);
    if (p == (1u << up_bits_) - 1) return kNil;
    return st->up[p];
  }

  ShortcutId up_by_power(Ref v, int power) const {
    const NodeShortcutState* st = host_.sstate_if(v);
    return st ? st->up[power] : kNil;
  }

  // Finds or creates the shortcut record top->bottom. Covered links are
  // wired when both power-1 halves are supplied (fresh creation only).
  ShortcutId get_or_create(Ref top, Ref bottom, ShortcutId cl = kNil, ShortcutId cr = kNil) {
    int p = power_of(top, bottom);
    ShortcutId existing = up_by_power(bottom, p);
    if (existing != kNil) {
      DYNCONN_ASSERT(pool_[existing].top == top, "up-by-power shortcut with wrong top");
      DYNCONN_ASSERT(cl == kNil || pool_[existing].cov_left == cl,
                     "covered pair mismatch on reuse");
      return existing;
    }
    ShortcutId id;
    if (!free_.empty()) {
      id = free_.back();
      free_.pop_back();
      pool_[id] = Rec{};
    } else {
      pool_.push_back(Rec{});
      id = static_cast<ShortcutId>(pool_.size() - 1);
    }
    Rec& r = pool_[id];
    r.top = top;
    r.bottom = bottom;
    r.power = static_cast<std::uint8_t>(p);
    if (p > 0) {
      DYNCONN_ASSERT(cl != kNil && cr != kNil, "covering shortcut without its covered pair");
      r.cov_left = cl;
      r.cov_right = cr;
      ++pool_[cl].cover_refs;
      ++pool_[cr].cover_refs;
    }
    host_.sstate(bottom).up[p] = id;
    ++live_;
    return id;
  }

  void add_membership(ShortcutId s, PairSet bits) {
    Rec& r = pool_[s];
    if (bits == 0) return;
    NodeShortcutState& ts = host_.sstate(r.top);
    if (r.down_slot == 0xff) {
      int slot = __builtin_ctzll(~ts.occupancy);
      DYNCONN_ASSERT(slot < pair_count_, "down array exhausted");
      if (static_cast<std::size_t>(slot) >= ts.down.size()) ts.down.resize(slot + 1, kNil);
      ts.down[slot] = s;
      ts.occupancy |= std::uint64_t{1} << slot;
      r.down_slot = static_cast<std::uint8_t>(slot);
    }
    NodeShortcutState& bs = host_.sstate(r.bottom);
    for (PairSet m = bits; m;) {
      int pair = __builtin_ctzll(m);
      m &= m - 1;
      DYNCONN_ASSERT(get_down(r.top, pair) == kNil || get_down(r.top, pair) == s,
                     "second downward shortcut for one pair");
      DYNCONN_ASSERT(get_up(r.bottom, pair) == kNil || get_up(r.bottom, pair) == s,
                     "second upward shortcut for one pair");
      ts.down_idx.set(down_bits_, pair_count_, pair, r.down_slot);
      bs.up_idx.set(up_bits_, pair_count_, pair, r.power);
    }
    r.membership |= bits;
  }

  // Clears pair bits without garbage-collecting; index entries are dropped so
  // another record can claim the pair immediately.
  void clear_membership(ShortcutId s, PairSet bits) {
    Rec& r = pool_[s];
    bits &= r.membership;
    if (bits == 0) return;
    NodeShortcutState& ts = host_.sstate(r.top);
    NodeShortcutState& bs = host_.sstate(r.bottom);
    for (PairSet m = bits; m;) {
      int pair = __builtin_ctzll(m);
      m &= m - 1;
      ts.down_idx.set(down_bits_, pair_count_, pair, (1u << down_bits_) - 1);
      bs.up_idx.set(up_bits_, pair_count_, pair, (1u << up_bits_) - 1);
    }
    r.membership &= ~bits;
    if (r.membership == 0 && r.down_slot != 0xff) {
      ts.occupancy &= ~(std::uint64_t{1} << r.down_slot);
      ts.down[r.down_slot] = kNil;
      r.down_slot = 0xff;
    }
  }

  // Clears pair bits; releases the record if it became unreachable.
  void remove_membership(ShortcutId s, PairSet bits) {
    clear_membership(s, bits);
    release_if_dead(s);
  }

  // Moves one pair from s to its covered halves. Fundamental uncovering is a
  // local-tree affair and must not come through here.
  std::pair<ShortcutId, ShortcutId> uncover(ShortcutId s, int pair) {
    Rec& r = pool_[s];
    if (r.power == 0) raise(Errc::Contract, "uncover of a fundamental shortcut");
    DYNCONN_ASSERT(r.membership >> pair & 1, "uncover of a non-member pair");
    ShortcutId a = r.cov_left, b = r.cov_right;
    clear_membership(s, PairSet{1} << pair);
    add_membership(a, PairSet{1} << pair);
    add_membership(b, PairSet{1} << pair);
    release_if_dead(s);
    return {a, b};
  }

  // The merging walk: follow the pair's downward shortcuts from u, covering
  // two consecutive equal-power links whenever the junction's level has the
  // strictly smallest LSB index. Afterwards the stored links from u to the
  // returned node are the largest covering set. Stops where no downward
  // shortcut for the pair exists, or at the first node satisfying `stop`
  // (a chain must end at the next (i,t)-node, never run into the next chain).
  Ref traverse_down(Ref u, int pair) {
    return traverse_down(u, pair, [](Ref) { return false; });
  }

  template <class Stop>
  Ref traverse_down(Ref u, int pair, Stop&& stop) {
    Ref cur = u;
    std::vector<ShortcutId> chain;
    for (;;) {
      if (cur != u && stop(cur)) break;
      ShortcutId s = get_down(cur, pair);
      if (s == kNil) break;
      while (!chain.empty()) {
        ShortcutId t = chain.back();
        // Copy fields: get_or_create may grow the pool.
        Ref t_top = pool_[t].top, mid = pool_[t].bottom, s_bot = pool_[s].bottom;
        int p = pool_[t].power;
        if (p != pool_[s].power) break;
        int lm = lsb_index(host_.level(mid));
        if (lm >= lsb_index(host_.level(t_top)) || lm >= lsb_index(host_.level(s_bot)))
          break;
        ShortcutId c = get_or_create(t_top, s_bot, t, s);
        DYNCONN_ASSERT(pool_[c].power == p + 1, "covering power mismatch");
        clear_membership(t, PairSet{1} << pair);
        clear_membership(s, PairSet{1} << pair);
        add_membership(c, PairSet{1} << pair);
        release_if_dead(t);
        release_if_dead(s);
        chain.pop_back();
        s = c;
      }
      chain.push_back(s);
      cur = pool_[s].bottom;
    }
    return cur;
  }

  // Covers two consecutive stored links with one record for all `bits` at
  // once (the rebuild sweeps move whole bitmaps).
  ShortcutId cover_bulk(ShortcutId s1, ShortcutId s2, PairSet bits) {
    Ref a = pool_[s1].top, b = pool_[s2].bottom;
    DYNCONN_ASSERT(pool_[s1].bottom == pool_[s2].top, "cover of non-adjacent links");
    ShortcutId c = get_or_create(a, b, s1, s2);
    clear_membership(s1, bits);
    clear_membership(s2, bits);
    add_membership(c, bits);
    release_if_dead(s1);
    release_if_dead(s2);
    return c;
  }

  // Walks the pair's chain without covering; visits each link's bottom.
  template <class F>
  Ref walk_down(Ref u, int pair, F&& visit) const {
    Ref cur = u;
    for (;;) {
      ShortcutId s = get_down(cur, pair);
      if (s == kNil) return cur;
      cur = pool_[s].bottom;
      visit(s, cur);
    }
  }

  template <class F>
  void for_each_down(Ref u, F&& f) const {
    const NodeShortcutState* st = host_.sstate_if(u);
    if (!st) return;
    for (std::uint64_t occ = st->occupancy; occ;) {
      int slot = __builtin_ctzll(occ);
      occ &= occ - 1;
      f(st->down[slot]);
    }
  }

  void release_if_dead(ShortcutId s) {
    Rec& r = pool_[s];
    if (r.freed || r.membership != 0 || r.cover_refs != 0) return;
    host_.sstate(r.bottom).up[r.power] = kNil;
    ShortcutId cl = r.cov_left, cr = r.cov_right;
    r.freed = true;
    r.cov_left = r.cov_right = kNil;
    free_.push_back(s);
    --live_;
    if (cl != kNil) {
      DYNCONN_ASSERT(pool_[cl].cover_refs > 0, "cover refcount underflow");
      --pool_[cl].cover_refs;
      release_if_dead(cl);
    }
    if (cr != kNil) {
      DYNCONN_ASSERT(pool_[cr].cover_refs > 0, "cover refcount underflow");
      --pool_[cr].cover_refs;
      release_if_dead(cr);
    }
  }

  template <class F>
  void for_each_live(F&& f) const {
    for (ShortcutId s = 0; s < pool_.size(); ++s)
      if (!pool_[s].freed) f(s, pool_[s]);
  }

 private:
  Host& host_;
  int pair_count_;
  int down_bits_;
  int up_bits_;
  std::vector<Rec> pool_;
  std::vector<ShortcutId> free_;
  std::size_t live_ = 0;
};

}  // namespace dynconn
