#include "causaldiag/context_rules.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "causaldiag/error.hpp"

namespace causaldiag {

nlohmann::json to_json(const ContextRule& r) {
  return {{"rule_id", r.rule_id},
          {"condition",
           {{"metric", r.condition.metric},
            {"threshold", r.condition.threshold},
            {"operator", r.condition.op}}},
          {"inject_node", r.inject_node},
          {"inject_edge", {{"from", r.edge_from}, {"to", r.edge_to}}}};
}

nlohmann::json to_json(const RuleOutcome& o) {
  return {{"rule_id", o.rule_id},
          {"fired", o.fired},
          {"injected", o.injected},
          {"reason", o.reason}};
}

namespace {

const std::set<std::string> kOperators{">", "<", ">=", "<=", "=="};

YAML::Node require(const YAML::Node& parent, const std::string& key, const std::string& path,
                   std::size_t index) {
  YAML::Node child = parent.IsMap() ? parent[key] : YAML::Node();
  if (!child.IsDefined() || child.IsNull()) {
    throw Error(ErrorKind::parse,
                "rule " + std::to_string(index) + ": missing field '" + path + "'");
  }
  return child;
}

std::string require_string(const YAML::Node& parent, const std::string& key,
                           const std::string& path, std::size_t index) {
  YAML::Node child = require(parent, key, path, index);
  if (!child.IsScalar() || child.Scalar().empty()) {
    throw Error(ErrorKind::parse,
                "rule " + std::to_string(index) + ": field '" + path + "' must be a string");
  }
  return child.Scalar();
}

}  // namespace

std::vector<ContextRule> parse_rules_text(std::string_view text) {
  std::vector<YAML::Node> docs;
  try {
    docs = YAML::LoadAll(std::string(text));
  } catch (const YAML::Exception& ex) {
    throw Error(ErrorKind::parse, std::string("invalid rule YAML: ") + ex.what());
  }
  std::vector<ContextRule> rules;
  std::set<std::string> ids;
  std::size_t index = 0;
  for (const auto& doc : docs) {
    if (doc.IsNull()) continue;
    if (!doc.IsMap()) {
      throw Error(ErrorKind::parse, "rule " + std::to_string(index) + ": expected a mapping");
    }
    ContextRule r;
    r.rule_id = require_string(doc, "rule_id", "rule_id", index);
    auto cond = require(doc, "condition", "condition", index);
    r.condition.metric = require_string(cond, "metric", "condition.metric", index);
    auto threshold = require(cond, "threshold", "condition.threshold", index);
    try {
      r.condition.threshold = threshold.as<double>();
    } catch (const YAML::Exception&) {
      throw Error(ErrorKind::parse, "rule " + std::to_string(index) +
                                        ": field 'condition.threshold' must be a number");
    }
    if (!std::isfinite(r.condition.threshold)) {
      throw Error(ErrorKind::parse, "rule " + std::to_string(index) +
                                        ": field 'condition.threshold' must be finite");
    }
    r.condition.op = require_string(cond, "operator", "condition.operator", index);
    if (!kOperators.count(r.condition.op)) {
      throw Error(ErrorKind::parse, "rule " + std::to_string(index) + ": unknown operator '" +
                                        r.condition.op + "'");
    }
    r.inject_node = require_string(doc, "inject_node", "inject_node", index);
    auto edge = require(doc, "inject_edge", "inject_edge", index);
    r.edge_from = require_string(edge, "from", "inject_edge.from", index);
    r.edge_to = require_string(edge, "to", "inject_edge.to", index);
    if (r.edge_from == r.edge_to) {
      throw Error(ErrorKind::parse,
                  "rule " + std::to_string(index) + ": inject_edge is a self-loop");
    }
    if (!ids.insert(r.rule_id).second) {
      throw Error(ErrorKind::parse, "rule " + std::to_string(index) + ": duplicate rule_id '" +
                                        r.rule_id + "'");
    }
    rules.push_back(std::move(r));
    ++index;
  }
  return rules;
}

std::vector<ContextRule> parse_rules(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::not_found, "cannot open rule file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_rules_text(buf.str());
}

namespace {

/// Rows of the batch carrying `metric`: the node itself or any pod-level
/// variant of it.
std::vector<std::size_t> metric_rows(const std::string& metric, const MetricBatch& batch,
                                     const std::vector<std::string>& suffixes) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < batch.node_ids.size(); ++i) {
    const auto& node = batch.node_ids[i];
    if (node == metric) {
      rows.push_back(i);
      continue;
    }
    auto suffix = matched_suffix(node, suffixes);
    if (suffix.empty()) continue;
    try {
      if (extract_service_name(node, suffixes) + suffix == metric) rows.push_back(i);
    } catch (const Error&) {
    }
  }
  return rows;
}

bool compare(double value, const std::string& op, double threshold) {
  if (op == ">") return value > threshold;
  if (op == "<") return value < threshold;
  if (op == ">=") return value >= threshold;
  if (op == "<=") return value <= threshold;
  if (op == "==") return std::abs(value - threshold) <= 1e-9;
  throw Error(ErrorKind::invalid_argument, "unknown operator '" + op + "'");
}

}  // namespace

bool evaluate_condition(const ContextRule& rule, const MetricBatch& batch,
                        const std::vector<std::string>& suffixes) {
  auto rows = metric_rows(rule.condition.metric, batch, suffixes);
  if (rows.empty() || batch.num_samples() == 0) {
    throw Error(ErrorKind::not_found,
                "metric '" + rule.condition.metric + "' not present in telemetry");
  }
  const auto last = static_cast<Eigen::Index>(batch.num_samples() - 1);
  double latest = -std::numeric_limits<double>::infinity();
  for (auto r : rows) latest = std::max(latest, batch.values(static_cast<Eigen::Index>(r), last));
  return compare(latest, rule.condition.op, rule.condition.threshold);
}

RuleApplication apply_rules(const CausalGraph& graph, const std::vector<ContextRule>& rules,
                            const MetricBatch& batch,
                            const std::vector<std::string>& suffixes) {
  RuleApplication result;
  CausalGraph work = graph;
  result.dropped = enforce_dag(work);
  work.set_stage(Stage::context_extended);

  for (const auto& rule : rules) {
    RuleOutcome o;
    o.rule_id = rule.rule_id;
    try {
      o.fired = evaluate_condition(rule, batch, suffixes);
    } catch (const Error& e) {
      o.reason = e.what();
      result.outcomes.push_back(o);
      continue;
    }
    if (!o.fired) {
      o.reason = "condition false";
      result.outcomes.push_back(o);
      continue;
    }
    auto resolvable = [&](const NodeId& n) {
      return n == rule.inject_node || work.has_node(n) ||
             !metric_rows(n, batch, suffixes).empty();
    };
    std::optional<NodeId> bad;
    if (!resolvable(rule.edge_from)) bad = rule.edge_from;
    else if (!resolvable(rule.edge_to)) bad = rule.edge_to;
    if (bad) {
      o.reason = "unresolvable edge endpoint '" + *bad + "'";
      result.outcomes.push_back(o);
      continue;
    }
    CausalEdge edge{rule.edge_from, rule.edge_to, 1.0, Provenance::rule};
    if (would_create_cycle(work, edge)) {
      o.reason = "cycle rejected";
      result.outcomes.push_back(o);
      continue;
    }
    work.add_node(rule.inject_node);
    work.remove_edge(edge.source, edge.target);  // the rule's provenance wins
    work.add_edge(edge);
    o.injected = true;
    o.reason = "injected";
    result.outcomes.push_back(o);
  }
  result.graph = std::move(work);
  return result;
}

}  // namespace causaldiag
