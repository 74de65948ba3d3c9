#include "causaldiag/graph.hpp"

#include <algorithm>
#include <functional>

#include "causaldiag/error.hpp"
#include "causaldiag/ingest.hpp"

namespace causaldiag {

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::base:
      return "base";
    case Provenance::policy:
      return "policy";
    case Provenance::rule:
      return "rule";
  }
  return "base";
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::raw:
      return "raw";
    case Stage::feedback_adjusted:
      return "feedback_adjusted";
    case Stage::pruned:
      return "pruned";
    case Stage::context_extended:
      return "context_extended";
  }
  return "raw";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "base") return Provenance::base;
  if (s == "policy") return Provenance::policy;
  if (s == "rule") return Provenance::rule;
  throw Error(ErrorKind::parse, "unknown provenance '" + std::string(s) + "'");
}

Stage stage_from_string(std::string_view s) {
  for (Stage st : kAllStages) {
    if (to_string(st) == s) return st;
  }
  throw Error(ErrorKind::not_found, "unknown stage '" + std::string(s) + "'");
}

std::string_view to_string(EvalLevel level) {
  return level == EvalLevel::node ? "node" : "service";
}

EvalLevel eval_level_from_string(std::string_view s) {
  if (s == "node") return EvalLevel::node;
  if (s == "service") return EvalLevel::service;
  throw Error(ErrorKind::invalid_argument,
              "unknown evaluation level '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// CausalGraph

void CausalGraph::set_stage(Stage stage) {
  if (stage == Stage::context_extended && !is_dag(*this)) {
    auto cycle = find_cycle(*this);
    std::string path;
    for (const auto& n : cycle) path += n + " -> ";
    if (!cycle.empty()) path += cycle.front();
    throw Error(ErrorKind::invalid_argument,
                "context_extended graph must be acyclic; cycle: " + path);
  }
  stage_ = stage;
}

void CausalGraph::add_node(const NodeId& node) {
  if (node.empty()) {
    throw Error(ErrorKind::invalid_argument, "node id must be non-empty");
  }
  nodes_.insert(node);
}

void CausalGraph::remove_node(const NodeId& node) {
  if (nodes_.erase(node) == 0) return;
  for (auto it = edges_.begin(); it != edges_.end();) {
    if (it->first.first == node || it->first.second == node) {
      it = edges_.erase(it);
    } else {
      ++it;
    }
  }
}

void CausalGraph::add_edge(const CausalEdge& edge) {
  if (edge.source == edge.target) {
    throw Error(ErrorKind::invalid_argument,
                "self-edge on '" + edge.source + "' is not allowed");
  }
  if (!(edge.confidence >= 0.0 && edge.confidence <= 1.0)) {
    throw Error(ErrorKind::invalid_argument,
                "edge confidence must lie in [0,1] for " + edge.source +
                    " -> " + edge.target);
  }
  Key key{edge.source, edge.target};
  auto it = edges_.find(key);
  if (it != edges_.end()) {
    if (edge.confidence > it->second.confidence) it->second = edge;
    return;
  }
  if (stage_ == Stage::context_extended && would_create_cycle(*this, edge)) {
    throw Error(ErrorKind::conflict, "edge " + edge.source + " -> " +
                                         edge.target + " would create a cycle");
  }
  add_node(edge.source);
  add_node(edge.target);
  edges_.emplace(std::move(key), edge);
}

bool CausalGraph::has_edge(const NodeId& source, const NodeId& target) const {
  return edges_.count(Key{source, target}) != 0;
}

const CausalEdge* CausalGraph::find_edge(const NodeId& source,
                                         const NodeId& target) const {
  auto it = edges_.find(Key{source, target});
  return it == edges_.end() ? nullptr : &it->second;
}

bool CausalGraph::remove_edge(const NodeId& source, const NodeId& target) {
  return edges_.erase(Key{source, target}) != 0;
}

std::vector<CausalEdge> CausalGraph::edges() const {
  std::vector<CausalEdge> out;
  out.reserve(edges_.size());
  for (const auto& [key, edge] : edges_) out.push_back(edge);
  return out;
}

std::vector<NodeId> CausalGraph::predecessors(const NodeId& node) const {
  std::vector<NodeId> out;
  for (const auto& [key, edge] : edges_) {
    if (key.second == node) out.push_back(key.first);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<NodeId> CausalGraph::successors(const NodeId& node) const {
  std::vector<NodeId> out;
  auto it = edges_.lower_bound(Key{node, std::string{}});
  for (; it != edges_.end() && it->first.first == node; ++it) {
    out.push_back(it->first.second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Algorithms

namespace {

std::map<NodeId, std::vector<NodeId>> successor_lists(const CausalGraph& g) {
  std::map<NodeId, std::vector<NodeId>> adj;
  for (const auto& n : g.nodes()) adj[n];
  for (const auto& e : g.edges()) adj[e.source].push_back(e.target);
  return adj;
}

}  // namespace

bool would_create_cycle(const CausalGraph& graph, const CausalEdge& candidate) {
  if (candidate.source == candidate.target) return true;
  if (!graph.has_node(candidate.source) || !graph.has_node(candidate.target)) {
    // A fresh endpoint has no incident edges, so no path can close.
    return false;
  }
  auto adj = successor_lists(graph);
  std::set<NodeId> seen;
  std::vector<NodeId> stack{candidate.target};
  while (!stack.empty()) {
    NodeId cur = std::move(stack.back());
    stack.pop_back();
    if (cur == candidate.source) return true;
    if (!seen.insert(cur).second) continue;
    for (const auto& next : adj[cur]) {
      if (!seen.count(next)) stack.push_back(next);
    }
  }
  return false;
}

std::vector<NodeId> find_cycle(const CausalGraph& graph) {
  auto adj = successor_lists(graph);
  enum class Color { white, grey, black };
  std::map<NodeId, Color> color;
  std::vector<NodeId> path;
  std::vector<NodeId> cycle;

  std::function<bool(const NodeId&)> visit = [&](const NodeId& n) {
    color[n] = Color::grey;
    path.push_back(n);
    for (const auto& next : adj[n]) {
      if (color[next] == Color::grey) {
        auto start = std::find(path.begin(), path.end(), next);
        cycle.assign(start, path.end());
        return true;
      }
      if (color[next] == Color::white && visit(next)) return true;
    }
    path.pop_back();
    color[n] = Color::black;
    return false;
  };

  for (const auto& n : graph.nodes()) {
    if (color[n] == Color::white && visit(n)) return cycle;
  }
  return {};
}

bool is_dag(const CausalGraph& graph) {
  // Kahn's algorithm.
  std::map<NodeId, std::size_t> indegree;
  for (const auto& n : graph.nodes()) indegree[n] = 0;
  auto adj = successor_lists(graph);
  for (const auto& e : graph.edges()) ++indegree[e.target];
  std::vector<NodeId> ready;
  for (const auto& [n, d] : indegree) {
    if (d == 0) ready.push_back(n);
  }
  std::size_t visited = 0;
  while (!ready.empty()) {
    NodeId n = std::move(ready.back());
    ready.pop_back();
    ++visited;
    for (const auto& next : adj[n]) {
      if (--indegree[next] == 0) ready.push_back(next);
    }
  }
  return visited == graph.node_count();
}

std::vector<CausalEdge> enforce_dag(CausalGraph& graph) {
  if (is_dag(graph)) return {};
  auto edges = graph.edges();
  std::stable_sort(edges.begin(), edges.end(),
                   [](const CausalEdge& a, const CausalEdge& b) {
                     return a.confidence > b.confidence;
                   });
  CausalGraph rebuilt(graph.stage());
  for (const auto& n : graph.nodes()) rebuilt.add_node(n);
  std::vector<CausalEdge> dropped;
  for (const auto& e : edges) {
    if (would_create_cycle(rebuilt, e)) {
      dropped.push_back(e);
    } else {
      rebuilt.add_edge(e);
    }
  }
  graph = std::move(rebuilt);
  return dropped;
}

std::set<NodeId> ancestors(const CausalGraph& graph, const NodeId& node) {
  std::map<NodeId, std::vector<NodeId>> preds;
  for (const auto& e : graph.edges()) preds[e.target].push_back(e.source);
  std::set<NodeId> seen;
  std::vector<NodeId> stack{node};
  while (!stack.empty()) {
    NodeId cur = std::move(stack.back());
    stack.pop_back();
    for (const auto& p : preds[cur]) {
      if (p != node && seen.insert(p).second) stack.push_back(p);
    }
  }
  return seen;
}

// ---------------------------------------------------------------------------
// Evaluation

std::set<std::pair<std::string, std::string>> service_pairs(
    const CausalGraph& graph, const std::vector<std::string>& suffixes) {
  const auto& sfx = suffixes.empty() ? default_metric_suffixes() : suffixes;
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& e : graph.edges()) {
    pairs.emplace(extract_service_name(e.source, sfx),
                  extract_service_name(e.target, sfx));
  }
  return pairs;
}

namespace {

GraphMetrics finish(std::size_t edge_count, std::size_t predicted,
                    std::size_t expected, std::size_t tp) {
  GraphMetrics m;
  m.edge_count = edge_count;
  m.predicted = predicted;
  m.expected = expected;
  m.true_positives = tp;
  m.precision = predicted ? static_cast<double>(tp) / predicted : 0.0;
  m.recall = expected ? static_cast<double>(tp) / expected : 0.0;
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

}  // namespace

GraphMetrics evaluate(const CausalGraph& predicted,
                      const CausalGraph& ground_truth, EvalLevel level,
                      const std::vector<std::string>& suffixes) {
  if (level == EvalLevel::node) {
    std::size_t tp = 0;
    for (const auto& e : predicted.edges()) {
      if (ground_truth.has_edge(e.source, e.target)) ++tp;
    }
    return finish(predicted.edge_count(), predicted.edge_count(),
                  ground_truth.edge_count(), tp);
  }
  auto pred = service_pairs(predicted, suffixes);
  auto truth = service_pairs(ground_truth, suffixes);
  std::size_t tp = 0;
  for (const auto& p : pred) tp += truth.count(p);
  return finish(predicted.edge_count(), pred.size(), truth.size(), tp);
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const CausalGraph& graph) {
  nlohmann::json j;
  j["stage"] = std::string(to_string(graph.stage()));
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : graph.nodes()) j["nodes"].push_back(n);
  j["edges"] = nlohmann::json::array();
  for (const auto& e : graph.edges()) {
    j["edges"].push_back({{"source", e.source},
                          {"target", e.target},
                          {"confidence", e.confidence},
                          {"provenance", std::string(to_string(e.provenance))}});
  }
  return j;
}

CausalGraph graph_from_json(const nlohmann::json& j) {
  try {
    CausalGraph g(stage_from_string(j.at("stage").get<std::string>()));
    // Promote after edges are in so context_extended graphs are checked once.
    Stage stage = g.stage();
    if (stage == Stage::context_extended) g = CausalGraph(Stage::pruned);
    for (const auto& n : j.at("nodes")) g.add_node(n.get<std::string>());
    for (const auto& e : j.at("edges")) {
      g.add_edge({e.at("source").get<std::string>(),
                  e.at("target").get<std::string>(),
                  e.at("confidence").get<double>(),
                  provenance_from_string(e.at("provenance").get<std::string>())});
    }
    g.set_stage(stage);
    return g;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::parse, std::string("invalid graph JSON: ") + ex.what());
  }
}

nlohmann::json to_json(const GraphMetrics& m) {
  return {{"edges", m.edge_count},       {"predicted", m.predicted},
          {"expected", m.expected},      {"true_positives", m.true_positives},
          {"precision", m.precision},    {"recall", m.recall},
          {"f1", m.f1}};
}

}  // namespace causaldiag
