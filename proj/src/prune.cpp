#include "causaldiag/prune.hpp"

#include <map>

#include "causaldiag/error.hpp"

namespace causaldiag {

void PruneConfig::validate() const {
  if (!(tau_conf >= 0.0 && tau_conf <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "tau_conf must lie in [0,1]");
  }
}

namespace {

CausalGraph empty_like(const CausalGraph& graph, Stage stage) {
  CausalGraph out(stage);
  for (const auto& n : graph.nodes()) out.add_node(n);
  return out;
}

}  // namespace

CausalGraph confidence_filter(const CausalGraph& graph, const PruneConfig& config) {
  config.validate();
  CausalGraph out = empty_like(graph, graph.stage());
  for (const auto& e : graph.edges()) {
    if (e.confidence >= config.tau_conf) out.add_edge(e);
  }
  return out;
}

CausalGraph trace_validate(const CausalGraph& graph, const TraceDependencyGraph& traces,
                           const PruneConfig& config) {
  CausalGraph out = empty_like(graph, graph.stage());
  for (const auto& e : graph.edges()) {
    const auto src = extract_service_name(e.source, config.suffixes);
    const auto dst = extract_service_name(e.target, config.suffixes);
    if (src == dst) {
      if (!config.drop_intra_service) out.add_edge(e);
      continue;
    }
    if (traces.has_edge(src, dst)) {
      out.add_edge(e);
    } else if (traces.has_edge(dst, src)) {
      CausalEdge flipped = e;
      std::swap(flipped.source, flipped.target);
      out.add_edge(flipped);
    }
  }
  return out;
}

CausalGraph aggregate_duplicates(const CausalGraph& graph, const PruneConfig& config) {
  std::map<std::pair<std::string, std::string>, CausalEdge> best;
  // edges() is in (source, target) order, so the first maximum seen is the
  // lexicographically smallest.
  for (const auto& e : graph.edges()) {
    auto key = std::make_pair(extract_service_name(e.source, config.suffixes),
                              extract_service_name(e.target, config.suffixes));
    auto it = best.find(key);
    if (it == best.end() || e.confidence > it->second.confidence) best[key] = e;
  }
  CausalGraph out = empty_like(graph, Stage::pruned);
  for (const auto& [key, e] : best) out.add_edge(e);
  return out;
}

CausalGraph prune(const CausalGraph& graph, const TraceDependencyGraph& traces,
                  const PruneConfig& config, std::vector<std::string>* warnings) {
  if (graph.stage() != Stage::feedback_adjusted && warnings) {
    warnings->push_back("pruning a graph at stage " + std::string(to_string(graph.stage())) +
                        ", expected feedback_adjusted");
  }
  return aggregate_duplicates(trace_validate(confidence_filter(graph, config), traces, config),
                              config);
}

}  // namespace causaldiag
