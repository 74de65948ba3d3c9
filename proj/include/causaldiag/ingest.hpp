#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "causaldiag/graph.hpp"

namespace causaldiag {

/// Aligned multivariate window: one row per node, one column per timestamp.
struct MetricBatch {
  std::vector<NodeId> node_ids;
  std::vector<std::int64_t> timestamps;
  Eigen::MatrixXd values;  // node x time

  std::size_t num_nodes() const { return node_ids.size(); }
  std::size_t num_samples() const { return timestamps.size(); }

  /// Row index of `node`, or nullopt.
  std::optional<std::size_t> index_of(const NodeId& node) const;
  /// Row of `node`; throws not_found if absent.
  Eigen::VectorXd series(const NodeId& node) const;

  /// Sub-batch over samples [begin, begin + length).
  MetricBatch slice(std::size_t begin, std::size_t length) const;

  /// Throws invalid_argument on broken invariants (dimension mismatch,
  /// non-increasing timestamps, non-finite values).
  void validate() const;
};

/// Service-level call graph with call counts.
class TraceDependencyGraph {
 public:
  using Pair = std::pair<std::string, std::string>;

  /// Adds `count` calls; duplicate pairs accumulate. Throws on self-loops
  /// and counts < 1.
  void add_calls(const std::string& caller, const std::string& callee,
                 std::int64_t count);
  bool has_edge(const std::string& caller, const std::string& callee) const;
  std::int64_t call_count(const std::string& caller,
                          const std::string& callee) const;
  const std::map<Pair, std::int64_t>& edges() const noexcept { return edges_; }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  bool empty() const noexcept { return edges_.empty(); }

  friend bool operator==(const TraceDependencyGraph&,
                         const TraceDependencyGraph&) = default;

 private:
  std::map<Pair, std::int64_t> edges_;
};

nlohmann::json to_json(const TraceDependencyGraph& traces);
TraceDependencyGraph traces_from_json(const nlohmann::json& j,
                                      std::vector<std::string>* warnings = nullptr);

/// {"_cpu_by_pod", "_mem_by_pod"}
const std::vector<std::string>& default_metric_suffixes();

/// Maps a pod-metric node to its service: strips the longest matching metric
/// suffix, then a trailing Kubernetes `-<6..10>-<5>` pod identifier.
/// Throws invalid_argument("unresolvable service ...") on an empty remainder.
std::string extract_service_name(std::string_view node,
                                 const std::vector<std::string>& suffixes);

/// The metric suffix `node` ends with (longest match), or empty.
std::string matched_suffix(std::string_view node,
                           const std::vector<std::string>& suffixes);

/// Strips a trailing `-[a-z0-9]{6,10}-[a-z0-9]{5}` pod identifier, if any.
std::string strip_pod_identifier(std::string_view pod);

struct MetricLoadOptions {
  double max_missing_fraction = 0.2;
};

struct MetricLoadResult {
  std::vector<MetricBatch> batches;
  std::vector<std::string> warnings;
};

/// Reads a JSON Lines metric file ({"metric","pod","ts","value"} per line)
/// and cuts it into sliding windows of `window` samples with stride `step`.
MetricLoadResult load_metrics(const std::filesystem::path& path,
                              std::size_t window, std::size_t step,
                              const MetricLoadOptions& options = {});

/// Same as load_metrics but from in-memory text.
MetricLoadResult parse_metrics(std::string_view text, std::size_t window,
                               std::size_t step,
                               const MetricLoadOptions& options = {});

/// Writes a batch in the JSON Lines format. `pods` maps a node's service to
/// the pod name used in the file; nodes without a mapping are written with
/// their service name as pod.
void write_metrics(const std::filesystem::path& path, const MetricBatch& batch,
                   const std::map<std::string, std::string>& pods,
                   const std::vector<std::string>& suffixes);

struct TraceLoadResult {
  TraceDependencyGraph graph;
  std::vector<std::string> warnings;
};

/// Reads {"edges":[{"caller","callee","count"}]}.
TraceLoadResult load_traces(const std::filesystem::path& path);

void write_traces(const std::filesystem::path& path,
                  const TraceDependencyGraph& traces);

}  // namespace causaldiag
