#include "dynconn/sampling.hpp"

#include <algorithm>
#include <map>

namespace dynconn {

std::pair<VertexId, EdgeId> Hierarchy::sample_primary_endpoint(NodeId v, int i, Rng& rng) {
  int pair = pair_index(i, EndpointType::Primary);
  NodeId cur = v;
  for (;;) {
    if (nodes_[cur].depth == layout_.dmax)
      return {nodes_[cur].vertex, store_.sample_uniform(nodes_[cur].vertex, pair, rng)};
    LocalForest::Tree& t = *nodes_[cur].ltree;
    if (lf_.root_status(t) >> pair & 1) {
      LocalId l = lf_.sample_primary_child(t, i, rng);
      cur = resolve_head(lf_.node(l).child, pair);
    } else if (hspace_.get_down(cur, pair) != kNil) {
      cur = chase_chain_down(cur, pair);
    } else {
      raise(Errc::EmptyPool, "no primary endpoints below this node");
    }
  }
}

bool Sampler::partner_inside(NodeId u, int i, VertexId w, EdgeId e, VertexId& other) const {
  const EdgeRecord& r = h_.edge(e);
  other = r.other(w);
  EndpointType t = r.type_at(other);
  // Climb the partner's (i,t)-forest to its root and compare components.
  NodeId root = const_cast<Hierarchy&>(h_).it_root_of(h_.leaf_of(other), pair_index(i, t));
  return root == u;
}

SampleOutcome Sampler::single_sample(NodeId u, int i, Rng& rng) {
  ++stat_single_samples;
  auto [w, e] = h_.sample_primary_endpoint(u, i, rng);
  SampleOutcome o;
  o.vertex = w;
  o.edge = e;
  o.is_replacement = !partner_inside(u, i, w, e, o.other);
  return o;
}

std::vector<SampleOutcome> Sampler::batch_sampling_test(NodeId u, int i, std::uint32_t k,
                                                        Rng& rng) {
  std::vector<SampleOutcome> out;
  if (k == 0) return out;
  int pp = pair_index(i, EndpointType::Primary);
  int ps = pair_index(i, EndpointType::Secondary);
  // Preprocessing method, incremental: enumerate and mark every i-primary and
  // i-secondary endpoint under u, collecting the primaries.
  std::uint64_t mark_epoch = h_.new_epoch();
  (void)mark_epoch;
  Hierarchy::EndpointWalk wp(h_, u, pp), ws(h_, u, ps);
  std::vector<std::pair<VertexId, EdgeId>> pool;
  bool prep_done = false;
  for (;;) {
    // one quantum of preprocessing
    for (std::uint32_t q = 0; q < cfg_.quantum; ++q) {
      VertexId w;
      EdgeId e;
      if (wp.next(w, e)) {
        h_.mark(h_.leaf_of(w));
        pool.emplace_back(w, e);
      } else if (ws.next(w, e)) {
        h_.mark(h_.leaf_of(w));
      } else {
        prep_done = true;
        break;
      }
    }
    if (prep_done) break;
    // one single sample per round
    out.push_back(single_sample(u, i, rng));
    if (out.size() == k) {
      ++stat_sample_wins;
      return out;
    }
  }
  ++stat_preprocess_wins;
  if (pool.empty()) raise(Errc::EmptyPool, "batch sampling from an empty pool");
  while (out.size() < k) {
    auto [w, e] = pool[rng.bounded(pool.size())];
    SampleOutcome o;
    o.vertex = w;
    o.edge = e;
    o.other = h_.edge(e).other(w);
    // Marked partner leaf == partner inside u; marking covers every vertex
    // under u holding an i-primary or i-secondary endpoint, and the partner
    // of an i-non-witness edge holds one by definition.
    o.is_replacement = !h_.marked(h_.leaf_of(o.other));
    out.push_back(o);
  }
  return out;
}

SamplingVerdict Sampler::sampling_procedure(NodeId u, int i, Rng& rng) {
  std::uint64_t s_hat = h_.primary_count(u, i);
  if (s_hat == 0) return {VerdictKind::FewReplacements, kNil, 0};
  std::uint32_t l1 = std::max(1, ceil_log2(s_hat + 2));
  std::uint32_t k1 = cfg_.c1 * std::max(1, ceil_log2(l1));
  for (const SampleOutcome& o : batch_sampling_test(u, i, k1, rng))
    if (o.is_replacement) return {VerdictKind::ReplacementFound, o.edge, 1};
  std::uint32_t k2 = cfg_.c2 * l1;
  auto batch = batch_sampling_test(u, i, k2, rng);
  std::uint32_t hits = 0;
  EdgeId first = kNil;
  for (const SampleOutcome& o : batch)
    if (o.is_replacement) {
      ++hits;
      if (first == kNil) first = o.edge;
    }
  if (2 * hits > k2) return {VerdictKind::ReplacementFound, first, 2};
  return {VerdictKind::FewReplacements, kNil, 2};
}

Sampler::EnumerationResult Sampler::enumeration_procedure(NodeId u, int i) {
  EnumerationResult res;
  h_.upgrade_secondary(u, i);
  int pp = pair_index(i, EndpointType::Primary);
  // Count enumerated endpoints per edge: one mark = replacement, two = both
  // ends inside, promotable.
  std::vector<std::pair<VertexId, EdgeId>> prim;
  h_.enumerate_endpoints(u, pp, [&](VertexId w, EdgeId e) { prim.emplace_back(w, e); });
  std::map<EdgeId, int> marks;
  for (auto& [w, e] : prim) ++marks[e];
  EdgeId best = kNil;
  std::vector<EdgeId> promote;
  for (auto& [e, c] : marks) {
    if (c == 1) {
      if (best == kNil || h_.edge(e).u < h_.edge(best).u ||
          (h_.edge(e).u == h_.edge(best).u && h_.edge(e).v < h_.edge(best).v))
        best = e;
    } else {
      DYNCONN_ASSERT(c == 2, "endpoint enumerated more than twice");
      promote.push_back(e);
    }
  }
  h_.promote_primary(u, i, promote);
  res.promoted = static_cast<std::uint32_t>(promote.size());
  res.replacement = best;
  return res;
}

}  // namespace dynconn
