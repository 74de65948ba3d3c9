#pragma once

#include "causaldiag/encoder.hpp"
#include "causaldiag/graph.hpp"

namespace causaldiag {

struct BasePolicyConfig {
  /// Calibrated so that every ground-truth edge of the default simulator
  /// survives decoding (see calibrate_tau_base).
  double tau_base = 0.3;

  void validate() const;
};

/// sigmoid(e_i . e_j) for unit-norm embeddings.
double base_edge_probability(const Eigen::VectorXd& e_i, const Eigen::VectorXd& e_j);

/// Every ordered pair whose probability exceeds tau_base becomes an edge; the
/// score is symmetric, so pairs enter in both directions.
CausalGraph decode_raw(const EmbeddingTable& embeddings, const BasePolicyConfig& config);

/// Largest threshold, rounded down to a multiple of `resolution`, at which
/// decode_raw still contains every edge of `ground_truth` between embedded
/// nodes. Throws invalid_argument if no such edge exists.
double calibrate_tau_base(const EmbeddingTable& embeddings,
                          const CausalGraph& ground_truth, double resolution = 0.005);

}  // namespace causaldiag
