#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "causaldiag/graph.hpp"
#include "causaldiag/ingest.hpp"

namespace causaldiag {

struct RuleCondition {
  std::string metric;
  double threshold = 0.0;
  std::string op;  // one of > < >= <= ==
};

struct ContextRule {
  std::string rule_id;
  RuleCondition condition;
  NodeId inject_node;
  NodeId edge_from;
  NodeId edge_to;
};

struct RuleOutcome {
  std::string rule_id;
  bool fired = false;
  bool injected = false;
  std::string reason;  // "injected", "condition false", "cycle rejected" or an error
};

nlohmann::json to_json(const ContextRule& rule);
nlohmann::json to_json(const RuleOutcome& outcome);

/// YAML rule file, one rule per document:
///   rule_id, condition{metric, threshold, operator}, inject_node,
///   inject_edge{from, to}
/// Throws parse errors naming the field and the rule index.
std::vector<ContextRule> parse_rules_text(std::string_view text);
std::vector<ContextRule> parse_rules(const std::filesystem::path& path);

/// Applies the operator to the latest value of the metric; several pods of
/// the same metric reduce to their maximum. Throws not_found if the metric
/// has no series in the batch.
bool evaluate_condition(const ContextRule& rule, const MetricBatch& batch,
                        const std::vector<std::string>& suffixes = default_metric_suffixes());

struct RuleApplication {
  CausalGraph graph{Stage::context_extended};
  std::vector<RuleOutcome> outcomes;
  /// Edges removed to make the input acyclic before any rule ran.
  std::vector<CausalEdge> dropped;
};

/// Fires rules in order, injecting node and edge (provenance rule,
/// confidence 1) unless the edge would close a cycle. A cyclic input is first
/// reduced with enforce_dag. The result is always a DAG.
RuleApplication apply_rules(const CausalGraph& graph, const std::vector<ContextRule>& rules,
                            const MetricBatch& batch,
                            const std::vector<std::string>& suffixes = default_metric_suffixes());

}  // namespace causaldiag
