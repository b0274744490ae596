#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dynconn {

using VertexId = std::uint32_t;
using NodeId = std::uint32_t;     // hierarchy node handle
using LocalId = std::uint32_t;    // local tree node handle
using EdgeId = std::uint32_t;
using ShortcutId = std::uint32_t;
using ElemId = std::uint32_t;     // euler tour sequence element

inline constexpr std::uint32_t kNil = 0xffffffffu;

enum class EndpointType : std::uint8_t { Witness = 0, Primary = 1, Secondary = 2 };

inline const char* to_string(EndpointType t) {
  switch (t) {
    case EndpointType::Witness: return "witness";
    case EndpointType::Primary: return "primary";
    default: return "secondary";
  }
}

// One bit per (depth, type) pair, depth in [1, d_max], plus one spare slot.
// n <= 2^21 keeps 3*d_max+1 <= 64 so a pair set is a single word.
using PairSet = std::uint64_t;

inline int pair_index(int depth, EndpointType t) {
  return 3 * (depth - 1) + static_cast<int>(t);
}
inline PairSet pair_bit(int depth, EndpointType t) {
  return PairSet{1} << pair_index(depth, t);
}
inline int pair_depth(int idx) { return idx / 3 + 1; }
inline EndpointType pair_type(int idx) { return static_cast<EndpointType>(idx % 3); }

// Smallest power of two >= log2-ish helpers (n >= 2).
inline int floor_log2(std::uint64_t x) { return 63 - __builtin_clzll(x); }
inline int ceil_log2(std::uint64_t x) { return x <= 1 ? 0 : 64 - __builtin_clzll(x - 1); }

struct EdgeKey {
  VertexId u, v;  // normalized u < v
  EdgeKey() : u(0), v(0) {}
  EdgeKey(VertexId a, VertexId b) : u(a < b ? a : b), v(a < b ? b : a) {}
  bool operator==(const EdgeKey& o) const { return u == o.u && v == o.v; }
  bool operator<(const EdgeKey& o) const { return u != o.u ? u < o.u : v < o.v; }
  std::uint64_t packed() const { return (std::uint64_t{u} << 32) | v; }
};

enum class Errc {
  SelfLoop,
  DuplicateEdge,
  MissingEdge,
  EmptyStore,
  EmptyPool,
  NoParent,
  Range,
  Contract,
  Corruption,
};

class Error : public std::runtime_error {
 public:
  Error(Errc c, const std::string& what) : std::runtime_error(what), code_(c) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc c, const std::string& what) { throw Error(c, what); }

// Internal consistency checks. These guard logic errors (stale handles,
// broken invariants), not user input; user input errors always throw.
#ifndef DYNCONN_NO_ASSERT
#define DYNCONN_ASSERT(cond, msg)                                             \
  do {                                                                        \
    if (!(cond)) ::dynconn::raise(::dynconn::Errc::Corruption,                \
                                  std::string("assert: ") + (msg));           \
  } while (0)
#else
#define DYNCONN_ASSERT(cond, msg) ((void)0)
#endif

}  // namespace dynconn
