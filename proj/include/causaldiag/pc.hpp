#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "causaldiag/graph.hpp"
#include "causaldiag/ingest.hpp"

namespace causaldiag {

/// Undirected adjacency found by constraint-based discovery. Pairs are stored
/// with the lexicographically smaller node first.
struct Skeleton {
  std::vector<NodeId> nodes;
  std::set<std::pair<NodeId, NodeId>> adjacency;
  double alpha = 0.05;
  std::size_t max_cond = 3;

  bool adjacent(const NodeId& a, const NodeId& b) const;
  void add(const NodeId& a, const NodeId& b);
  std::vector<NodeId> neighbors(const NodeId& node) const;

  friend bool operator==(const Skeleton&, const Skeleton&) = default;
};

nlohmann::json to_json(const Skeleton& skeleton);
Skeleton skeleton_from_json(const nlohmann::json& j);

/// Fisher-z conditional independence test over one batch. The correlation
/// matrix is computed once; each query inverts the (|S|+2)-square submatrix.
class FisherZTest {
 public:
  /// Throws degenerate on constant series.
  explicit FisherZTest(const MetricBatch& batch);

  std::size_t num_nodes() const { return static_cast<std::size_t>(corr_.rows()); }
  std::size_t num_samples() const { return samples_; }
  const Eigen::MatrixXd& correlation() const { return corr_; }

  /// Partial correlation of i and j given `cond` (row indices).
  double partial_correlation(std::size_t i, std::size_t j,
                             const std::vector<std::size_t>& cond) const;

  /// sqrt(n - |S| - 3) * |atanh(rho)|; +inf for |rho| == 1.
  double statistic(std::size_t i, std::size_t j,
                   const std::vector<std::size_t>& cond) const;

  /// True iff independence is not rejected at level alpha.
  bool independent(std::size_t i, std::size_t j,
                   const std::vector<std::size_t>& cond, double alpha) const;

 private:
  Eigen::MatrixXd corr_;
  std::size_t samples_ = 0;
};

/// Two-sided standard-normal critical value z_{1 - alpha/2}.
double normal_critical_value(double alpha);

bool fisher_z_test(const MetricBatch& batch, const NodeId& i, const NodeId& j,
                   const std::vector<NodeId>& conditioning, double alpha);

/// PC skeleton phase (order-independent "stable" variant): adjacency sets are
/// frozen at the start of each conditioning level, subsets enumerated in
/// lexicographic order, removals applied between levels.
Skeleton pc_skeleton(const MetricBatch& batch, double alpha = 0.05,
                     std::size_t max_cond = 3);

}  // namespace causaldiag
