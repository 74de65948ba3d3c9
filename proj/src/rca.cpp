#include "causaldiag/rca.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "causaldiag/error.hpp"

namespace causaldiag {

void RcaConfig::validate() const {
  if (walks < 1 || max_steps < 1) {
    throw Error(ErrorKind::invalid_argument, "walks and max_steps must be at least 1");
  }
  if (!(restart_prob > 0.0 && restart_prob < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "restart_prob must lie in (0,1)");
  }
}

nlohmann::json to_json(const RcaResult& result) {
  nlohmann::json ranked = nlohmann::json::array();
  for (const auto& r : result.ranked) ranked.push_back({{"node", r.node}, {"score", r.score}});
  return {{"anomaly", result.anomaly}, {"ranked", ranked}};
}

std::optional<NodeId> detect_anomaly(const MetricBatch& batch, double z_threshold) {
  const std::size_t t = batch.num_samples();
  if (t < 30) throw Error(ErrorKind::invalid_argument, "anomaly detection needs 30 samples");
  std::optional<NodeId> best;
  double best_z = z_threshold;
  for (std::size_t i = 0; i < batch.num_nodes(); ++i) {
    Eigen::VectorXd x = batch.values.row(static_cast<Eigen::Index>(i)).transpose();
    const double mean = x.mean();
    const double sd =
        std::sqrt((x.array() - mean).square().sum() / static_cast<double>(t - 1));
    if (!(sd > 0.0)) continue;
    const double z = std::abs(x(x.size() - 1) - mean) / sd;
    const auto& node = batch.node_ids[i];
    if (z > best_z || (best && z == best_z && node < *best)) {
      best = node;
      best_z = z;
    }
  }
  return best;
}

RcaResult random_walk_rca(const CausalGraph& graph, const NodeId& anomaly,
                          const RcaConfig& config) {
  config.validate();
  if (!graph.has_node(anomaly)) {
    throw Error(ErrorKind::not_found, "anomaly node '" + anomaly + "' not in graph");
  }
  if (!is_dag(graph)) throw Error(ErrorKind::conflict, "RCA needs an acyclic graph");

  struct Incoming {
    std::vector<NodeId> sources;
    std::vector<double> cumulative;
  };
  std::map<NodeId, Incoming> incoming;
  for (const auto& e : graph.edges()) incoming[e.target].sources.push_back(e.source);
  for (auto& [target, in] : incoming) {
    double total = 0.0;
    for (const auto& s : in.sources) total += graph.find_edge(s, target)->confidence;
    double acc = 0.0;
    for (const auto& s : in.sources) {
      double w = total > 0.0 ? graph.find_edge(s, target)->confidence / total
                             : 1.0 / static_cast<double>(in.sources.size());
      acc += w;
      in.cumulative.push_back(acc);
    }
  }

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::map<NodeId, std::size_t> visits;
  for (std::size_t w = 0; w < config.walks; ++w) {
    const NodeId* cur = &anomaly;
    for (std::size_t step = 0; step < config.max_steps; ++step) {
      if (unit(rng) < config.restart_prob) {
        cur = &anomaly;
      } else if (auto it = incoming.find(*cur); it != incoming.end()) {
        const auto& in = it->second;
        double u = unit(rng) * in.cumulative.back();
        auto k = static_cast<std::size_t>(
            std::upper_bound(in.cumulative.begin(), in.cumulative.end(), u) -
            in.cumulative.begin());
        cur = &in.sources[std::min(k, in.sources.size() - 1)];
      }
      ++visits[*cur];
    }
  }

  const double total = static_cast<double>(config.walks * config.max_steps);
  RcaResult result;
  result.anomaly = anomaly;
  for (const auto& [node, count] : visits) {
    result.ranked.push_back({node, static_cast<double>(count) / total});
  }
  std::stable_sort(result.ranked.begin(), result.ranked.end(),
                   [](const RankedNode& a, const RankedNode& b) { return a.score > b.score; });
  return result;
}

}  // namespace causaldiag
