#pragma once

#include <vector>

#include "dynconn/hierarchy.hpp"
#include "dynconn/rng.hpp"

namespace dynconn {

struct SampleOutcome {
  VertexId vertex = 0;
  EdgeId edge = kNil;
  VertexId other = 0;
  bool is_replacement = false;
};

enum class VerdictKind { ReplacementFound, FewReplacements };

struct SamplingVerdict {
  VerdictKind kind = VerdictKind::FewReplacements;
  EdgeId edge = kNil;
  int stage = 0;  // 0: empty-pool short-circuit, 1/2: which batch decided
};

struct SamplingConfig {
  std::uint32_t c1 = 4;
  std::uint32_t c2 = 8;
  std::uint32_t quantum = 64;  // cooperative work units per race round
};

// The two-stage randomized replacement search plus the enumeration fallback.
// Randomness only ever affects running time; the caller's connectivity
// answers cannot depend on any verdict here.
class Sampler {
 public:
  Sampler(Hierarchy& h, SamplingConfig cfg) : h_(h), cfg_(cfg) {}

  SampleOutcome single_sample(NodeId u, int i, Rng& rng);

  // Runs k single samples racing the preprocessing method in interleaved
  // quanta; whichever finishes first supplies the outcomes.
  std::vector<SampleOutcome> batch_sampling_test(NodeId u, int i, std::uint32_t k, Rng& rng);

  SamplingVerdict sampling_procedure(NodeId u, int i, Rng& rng);

  struct EnumerationResult {
    EdgeId replacement = kNil;  // kNil: none exists at this depth
    std::uint32_t promoted = 0;
  };
  EnumerationResult enumeration_procedure(NodeId u, int i);

  // instrumentation (benchmark counters)
  std::uint64_t stat_single_samples = 0, stat_preprocess_wins = 0, stat_sample_wins = 0;

 private:
  bool partner_inside(NodeId u, int i, VertexId w, EdgeId e, VertexId& other) const;

  Hierarchy& h_;
  SamplingConfig cfg_;
};

}  // namespace dynconn
