#pragma once

#include <string>
#include <vector>

#include "causaldiag/graph.hpp"
#include "causaldiag/ingest.hpp"

namespace causaldiag {

struct PruneConfig {
  double tau_conf = 0.5;
  std::vector<std::string> suffixes = default_metric_suffixes();
  /// Drop edges between two metrics of the same service; when false they are
  /// kept without trace validation.
  bool drop_intra_service = true;

  void validate() const;
};

/// Keeps edges with confidence >= tau_conf.
CausalGraph confidence_filter(const CausalGraph& graph, const PruneConfig& config);

/// Keeps edges whose service pair appears in the traces, flips edges whose
/// reverse pair appears instead, and drops the rest.
CausalGraph trace_validate(const CausalGraph& graph, const TraceDependencyGraph& traces,
                           const PruneConfig& config);

/// At most one edge per (source service, target service): the most
/// confident one, ties broken by the smaller (source, target).
CausalGraph aggregate_duplicates(const CausalGraph& graph, const PruneConfig& config);

/// confidence_filter, trace_validate, aggregate_duplicates; result is at
/// stage pruned. Warnings (e.g. unexpected input stage) go to `warnings`.
CausalGraph prune(const CausalGraph& graph, const TraceDependencyGraph& traces,
                  const PruneConfig& config, std::vector<std::string>* warnings = nullptr);

}  // namespace causaldiag
