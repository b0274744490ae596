#pragma once

#include <map>
#include <string>

#include "dynconn/euler_forest.hpp"
#include "dynconn/hierarchy.hpp"
#include "dynconn/rng.hpp"
#include "dynconn/sampling.hpp"

namespace dynconn {

enum class AuditLevel { Off, Cheap, Full };

struct EngineConfig {
  int forest_branching = 8;
  std::uint32_t c1 = 4, c2 = 8;
  std::uint32_t c_H = 4;               // precision-audit constant
  std::uint64_t buffer_capacity = 0;   // 0: (log2 n)^5
  std::uint32_t top_capacity = 0;      // 0: 2 log2 n
  std::uint32_t race_quantum = 64;
};

struct AuditReport {
  bool ok = true;
  std::string first_violation;
};

// Dynamic connectivity on an undirected graph: insert, delete, query.
// Queries are answered from the witness forest and are always exact; the
// random sampling inside deletions affects running time only.
class Engine {
 public:
  Engine(std::uint32_t n, std::uint64_t seed = 0, const EngineConfig& cfg = {});

  void insert(VertexId u, VertexId v);
  void erase(VertexId u, VertexId v);
  bool connected(VertexId u, VertexId v) const;

  std::uint32_t n() const { return n_; }
  const EngineConfig& config() const { return cfg_; }
  Hierarchy& hierarchy() { return h_; }
  const Hierarchy& hierarchy() const { return h_; }
  const EulerForest& forest() const { return forest_; }
  Sampler& sampler() { return sampler_; }
  Rng& rng() { return rng_; }

  AuditReport validate(AuditLevel level);  // audit.cpp

  // Debug hook: when set, the deletion cascade cross-checks every
  // (i,primary) counter against the exact count after each phase.
  bool debug_paranoid = false;
  void paranoid_counter_check(const char* where);

  struct BottomShadowEntry {
    PairSet status = 0;
    std::uint64_t weight = 0;
    std::vector<std::uint64_t> counters;
  };

  struct Stats {
    std::uint64_t inserts = 0, deletes = 0, queries = 0;
    std::uint64_t cascades = 0, levels_descended = 0;
    std::uint64_t replacements_sampled = 0, replacements_enumerated = 0;
  };
  const Stats& stats() const { return stats_; }

 private:
  friend class Auditor;

  struct DfsSide {
    std::vector<NodeId> members;
    std::vector<Hierarchy::EndpointWalk> walks;
    std::size_t active = 0;
    std::uint64_t weight = 0;
    bool done = false;
  };
  // Expands one witness endpoint; marks newly reached depth-i components.
  bool dfs_step(DfsSide& side, int i, std::uint64_t my_epoch, std::uint64_t unused, bool is_u);
  void delete_witness(EdgeId e, VertexId u, VertexId v);

  std::uint32_t n_;
  EngineConfig cfg_;
  Rng rng_;
  Hierarchy h_;
  EulerForest forest_;
  Sampler sampler_;
  Stats stats_;
  std::vector<std::uint64_t> side_mark_;  // per-node DFS visit epoch
  std::uint64_t dfs_epoch_ = 0;

 public:
  // Invariant-4 shadow state, persisted between Full audits (audit.cpp).
  std::map<std::pair<LocalId, std::uint16_t>, BottomShadowEntry> bottom_shadow_;
};

}  // namespace dynconn
