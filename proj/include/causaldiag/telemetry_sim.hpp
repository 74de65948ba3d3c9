#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "causaldiag/graph.hpp"
#include "causaldiag/ingest.hpp"

namespace causaldiag {

/// One lagged link of the structural causal model: from(t-1) -> to(t).
struct CausalLink {
  NodeId from;
  NodeId to;
  double coefficient = 0.0;
};

/// Programmable ground-truth system. Node ids are `<service>_<metric>`.
struct SystemSpec {
  std::vector<std::string> services;
  std::vector<std::string> metrics_per_service{"cpu_by_pod", "mem_by_pod"};
  std::vector<CausalLink> causal_adjacency;
  double noise_std = 1.0;
  std::uint64_t seed = 0;
  /// Per-node AR(1) self coefficient. Must satisfy |persistence| < 1.
  double persistence = 0.0;
  /// Constant level added to emitted values (state itself is zero-mean).
  std::map<NodeId, double> baseline;
  /// Services whose calls never appear in the generated traces.
  std::vector<std::string> trace_drop;
  std::int64_t start_ts = 1'700'000'000;
  std::int64_t interval_s = 15;

  std::vector<NodeId> node_ids() const;
  std::vector<std::string> metric_suffixes() const;
};

enum class FaultKind { none, queue_overflow };

struct FaultSpec {
  FaultKind kind = FaultKind::none;
  std::string target_service;
  std::string target_metric = "cpu_by_pod";
  std::size_t onset = 0;
  double magnitude = 0.0;
  NodeId latent_node = "parking_queue";
  double queue_ar = 0.95;

  NodeId target_node() const { return target_service + "_" + target_metric; }
};

struct GroundTruth {
  CausalGraph causal_graph{Stage::context_extended};
  TraceDependencyGraph trace_graph;
  std::optional<NodeId> fault_root;
};

/// Throws invalid_argument naming the violated invariant.
void validate(const SystemSpec& spec);

/// Largest |eigenvalue| of the lag-1 transition matrix.
double spectral_radius(const SystemSpec& spec);

/// Lag-1 linear-Gaussian SCM
///   x_i(t) = persistence * x_i(t-1) + sum_j a_ji x_j(t-1) + e_i(t)
/// plus, for queue_overflow, magnitude * q(t) added to the target node where
/// q is a latent AR(1) queue ramping towards 1 after onset. The latent queue
/// is never emitted.
MetricBatch generate_metrics(const SystemSpec& spec, const FaultSpec& fault,
                             std::size_t horizon);

/// Service projection of the causal adjacency (caller = source's service),
/// skipping intra-service links and services on the drop list.
TraceDependencyGraph generate_traces(const SystemSpec& spec);

/// Ground-truth causal graph over the spec's nodes.
CausalGraph ground_truth_graph(const SystemSpec& spec);

/// Deterministic `<service>-<9 hex>-<5 alnum>` pod name per service.
std::map<std::string, std::string> pod_names(const SystemSpec& spec);

struct AvpScenario {
  SystemSpec spec;
  FaultSpec fault;
  GroundTruth truth;
};

/// Synthetic seven-service valet-parking analogue with a 19-edge ground truth
/// and a queue-overflow fault on the valetparking service.
AvpScenario default_avp_spec(std::uint64_t seed = 7);

/// Random acyclic spec for property tests.
SystemSpec random_spec(std::uint64_t seed, std::size_t services,
                       double edge_probability);

nlohmann::json to_json(const SystemSpec& spec);
nlohmann::json to_json(const FaultSpec& fault);

}  // namespace causaldiag
