#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "causaldiag/graph.hpp"
#include "causaldiag/ingest.hpp"

namespace causaldiag {

struct RcaConfig {
  std::size_t walks = 1000;
  std::size_t max_steps = 10;
  double restart_prob = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RankedNode {
  NodeId node;
  double score = 0.0;

  friend bool operator==(const RankedNode&, const RankedNode&) = default;
};

struct RcaResult {
  NodeId anomaly;
  std::vector<RankedNode> ranked;  // descending score, ties lexicographic

  friend bool operator==(const RcaResult&, const RcaResult&) = default;
};

nlohmann::json to_json(const RcaResult& result);

/// Node whose latest value deviates most from its window mean in units of
/// its window standard deviation, if that |z| exceeds `z_threshold`.
/// Constant series are skipped. Needs at least 30 samples.
std::optional<NodeId> detect_anomaly(const MetricBatch& batch, double z_threshold);

/// Backward random walk with restart from `anomaly`. Each step restarts with
/// restart_prob, otherwise moves to a predecessor chosen in proportion to edge
/// confidence; a node without predecessors keeps the walker. Scores are visit
/// fractions over all steps after the start.
RcaResult random_walk_rca(const CausalGraph& graph, const NodeId& anomaly,
                          const RcaConfig& config);

}  // namespace causaldiag
