#include "causaldiag/base_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "causaldiag/error.hpp"
#include "causaldiag/nn.hpp"

namespace causaldiag {

void BasePolicyConfig::validate() const {
  if (!(tau_base > 0.0 && tau_base < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "tau_base must lie in (0,1)");
  }
}

double base_edge_probability(const Eigen::VectorXd& e_i, const Eigen::VectorXd& e_j) {
  if (e_i.size() != e_j.size()) {
    throw Error(ErrorKind::invalid_argument, "embedding dimensions differ");
  }
  return sigmoid(e_i.dot(e_j));
}

CausalGraph decode_raw(const EmbeddingTable& embeddings, const BasePolicyConfig& config) {
  config.validate();
  if (embeddings.size() < 2) {
    throw Error(ErrorKind::invalid_argument, "decoding needs at least two nodes");
  }
  CausalGraph graph(Stage::raw);
  const auto& nodes = embeddings.nodes();
  const auto& z = embeddings.matrix();
  for (std::size_t i = 0; i < nodes.size(); ++i) graph.add_node(nodes[i]);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = i + 1; j < nodes.size(); ++j) {
      double p = sigmoid(z.row(static_cast<Eigen::Index>(i))
                             .dot(z.row(static_cast<Eigen::Index>(j))));
      if (p > config.tau_base) {
        graph.add_edge({nodes[i], nodes[j], p, Provenance::base});
        graph.add_edge({nodes[j], nodes[i], p, Provenance::base});
      }
    }
  }
  return graph;
}

double calibrate_tau_base(const EmbeddingTable& embeddings,
                          const CausalGraph& ground_truth, double resolution) {
  if (!(resolution > 0.0)) {
    throw Error(ErrorKind::invalid_argument, "resolution must be positive");
  }
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& e : ground_truth.edges()) {
    if (!embeddings.contains(e.source) || !embeddings.contains(e.target)) continue;
    lowest = std::min(lowest, base_edge_probability(embeddings.at(e.source),
                                                    embeddings.at(e.target)));
  }
  if (!std::isfinite(lowest)) {
    throw Error(ErrorKind::invalid_argument, "no ground-truth edge between embedded nodes");
  }
  // Strictly below the weakest true pair so that the strict test keeps it.
  double tau = std::floor(lowest / resolution) * resolution;
  if (tau >= lowest) tau -= resolution;
  return std::clamp(tau, resolution, 1.0 - resolution);
}

}  // namespace causaldiag
