#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace causaldiag {

/// Identifier of a pod-metric node (e.g. "valetparking_cpu_by_pod") or of an
/// injected context node (e.g. "parking_queue").
using NodeId = std::string;

enum class Provenance { base, policy, rule };

enum class Stage { raw, feedback_adjusted, pruned, context_extended };

std::string_view to_string(Provenance p);
std::string_view to_string(Stage s);
Provenance provenance_from_string(std::string_view s);
Stage stage_from_string(std::string_view s);

/// Stages in pipeline order.
inline constexpr Stage kAllStages[] = {Stage::raw, Stage::feedback_adjusted,
                                       Stage::pruned, Stage::context_extended};

struct CausalEdge {
  NodeId source;
  NodeId target;
  double confidence = 1.0;
  Provenance provenance = Provenance::base;

  friend bool operator==(const CausalEdge&, const CausalEdge&) = default;
};

/// Directed graph over pod-metric nodes. Edges are keyed by (source, target)
/// and iterate in lexicographic order. A graph at stage context_extended
/// refuses edges that would close a cycle.
class CausalGraph {
 public:
  explicit CausalGraph(Stage stage = Stage::raw) : stage_(stage) {}

  Stage stage() const noexcept { return stage_; }
  /// Throws if promoting to context_extended while cyclic.
  void set_stage(Stage stage);

  void add_node(const NodeId& node);
  bool has_node(const NodeId& node) const { return nodes_.count(node) != 0; }
  /// Removes the node and every incident edge.
  void remove_node(const NodeId& node);

  /// Inserts the edge, adding endpoints as needed. A duplicate (source,
  /// target) pair keeps the larger confidence.
  void add_edge(const CausalEdge& edge);
  bool has_edge(const NodeId& source, const NodeId& target) const;
  const CausalEdge* find_edge(const NodeId& source, const NodeId& target) const;
  bool remove_edge(const NodeId& source, const NodeId& target);

  const std::set<NodeId>& nodes() const noexcept { return nodes_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }

  /// Edges in canonical order (source, then target).
  std::vector<CausalEdge> edges() const;

  /// Sorted lists of direct predecessors / successors.
  std::vector<NodeId> predecessors(const NodeId& node) const;
  std::vector<NodeId> successors(const NodeId& node) const;

  friend bool operator==(const CausalGraph&, const CausalGraph&) = default;

 private:
  using Key = std::pair<NodeId, NodeId>;

  Stage stage_;
  std::set<NodeId> nodes_;
  std::map<Key, CausalEdge> edges_;
};

/// True iff a directed path target -> ... -> source already exists, i.e.
/// adding `candidate` would close a cycle. Self-edges count as cycles.
bool would_create_cycle(const CausalGraph& graph, const CausalEdge& candidate);

bool is_dag(const CausalGraph& graph);

/// Directed cycle through the lexicographically first node that lies on one,
/// or empty if acyclic. Used for error messages.
std::vector<NodeId> find_cycle(const CausalGraph& graph);

/// Greedy DAG enforcement: edges are re-inserted in descending confidence
/// order (ties lexicographic) and any edge closing a cycle is dropped. Returns
/// the dropped edges.
std::vector<CausalEdge> enforce_dag(CausalGraph& graph);

/// Nodes from which `node` is reachable (excluding `node` itself).
std::set<NodeId> ancestors(const CausalGraph& graph, const NodeId& node);

enum class EvalLevel { node, service };

std::string_view to_string(EvalLevel level);
EvalLevel eval_level_from_string(std::string_view s);

struct GraphMetrics {
  std::size_t edge_count = 0;      ///< edges in the predicted graph
  std::size_t predicted = 0;       ///< compared units (edges or service pairs)
  std::size_t expected = 0;
  std::size_t true_positives = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  friend bool operator==(const GraphMetrics&, const GraphMetrics&) = default;
};

/// Precision / recall / F1 of directed edge matches. At service level every
/// edge is projected to its (service, service) pair first and duplicates
/// collapse; `suffixes` are the metric suffixes used for that projection.
GraphMetrics evaluate(const CausalGraph& predicted,
                      const CausalGraph& ground_truth, EvalLevel level,
                      const std::vector<std::string>& suffixes = {});

/// Set of directed service pairs covered by the graph's edges.
std::set<std::pair<std::string, std::string>> service_pairs(
    const CausalGraph& graph, const std::vector<std::string>& suffixes);

nlohmann::json to_json(const CausalGraph& graph);
CausalGraph graph_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GraphMetrics& metrics);

}  // namespace causaldiag
