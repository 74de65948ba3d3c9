#include "causaldiag/telemetry_sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <Eigen/Eigenvalues>

#include "causaldiag/error.hpp"

namespace causaldiag {

std::vector<NodeId> SystemSpec::node_ids() const {
  std::vector<NodeId> ids;
  for (const auto& s : services) {
    for (const auto& m : metrics_per_service) ids.push_back(s + "_" + m);
  }
  return ids;
}

std::vector<std::string> SystemSpec::metric_suffixes() const {
  std::vector<std::string> out;
  for (const auto& m : metrics_per_service) out.push_back("_" + m);
  return out;
}

namespace {

std::map<NodeId, std::size_t> index_nodes(const SystemSpec& spec) {
  std::map<NodeId, std::size_t> idx;
  auto ids = spec.node_ids();
  for (std::size_t i = 0; i < ids.size(); ++i) idx[ids[i]] = i;
  return idx;
}

Eigen::MatrixXd transition_matrix(const SystemSpec& spec,
                                  const std::map<NodeId, std::size_t>& idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n) * spec.persistence;
  for (const auto& link : spec.causal_adjacency) {
    m(static_cast<Eigen::Index>(idx.at(link.to)),
      static_cast<Eigen::Index>(idx.at(link.from))) += link.coefficient;
  }
  return m;
}

}  // namespace

CausalGraph ground_truth_graph(const SystemSpec& spec) {
  CausalGraph g(Stage::pruned);
  for (const auto& n : spec.node_ids()) g.add_node(n);
  for (const auto& link : spec.causal_adjacency) {
    g.add_edge({link.from, link.to, 1.0, Provenance::base});
  }
  return g;
}

void validate(const SystemSpec& spec) {
  if (spec.services.empty()) {
    throw Error(ErrorKind::invalid_argument, "system spec has no services");
  }
  if (spec.metrics_per_service.empty()) {
    throw Error(ErrorKind::invalid_argument, "system spec has no metrics");
  }
  if (!(spec.noise_std > 0.0)) {
    throw Error(ErrorKind::invalid_argument, "noise_std must be > 0");
  }
  auto idx = index_nodes(spec);
  if (idx.size() != spec.services.size() * spec.metrics_per_service.size()) {
    throw Error(ErrorKind::invalid_argument, "duplicate service or metric names");
  }
  for (const auto& link : spec.causal_adjacency) {
    if (!idx.count(link.from) || !idx.count(link.to)) {
      throw Error(ErrorKind::invalid_argument, "causal link references unknown node " +
                                                   link.from + " -> " + link.to);
    }
    if (std::abs(link.coefficient) > 0.95) {
      throw Error(ErrorKind::invalid_argument,
                  "coefficient of " + link.from + " -> " + link.to +
                      " exceeds 0.95 in magnitude");
    }
  }
  CausalGraph g = ground_truth_graph(spec);
  if (!is_dag(g)) {
    throw Error(ErrorKind::invalid_argument, "causal adjacency is cyclic");
  }
  for (const auto& [node, level] : spec.baseline) {
    if (!idx.count(node)) {
      throw Error(ErrorKind::invalid_argument, "baseline for unknown node " + node);
    }
  }
  if (spectral_radius(spec) >= 1.0) {
    throw Error(ErrorKind::invalid_argument,
                "unstable system spec: spectral radius >= 1");
  }
}

double spectral_radius(const SystemSpec& spec) {
  auto idx = index_nodes(spec);
  Eigen::EigenSolver<Eigen::MatrixXd> solver(transition_matrix(spec, idx),
                                             /*computeEigenvectors=*/false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

MetricBatch generate_metrics(const SystemSpec& spec, const FaultSpec& fault,
                             std::size_t horizon) {
  if (horizon < 100) {
    throw Error(ErrorKind::invalid_argument, "horizon must be >= 100");
  }
  validate(spec);
  auto idx = index_nodes(spec);
  const auto ids = spec.node_ids();
  const auto n = static_cast<Eigen::Index>(ids.size());

  std::optional<Eigen::Index> fault_row;
  if (fault.kind == FaultKind::queue_overflow) {
    if (fault.onset >= horizon) {
      throw Error(ErrorKind::invalid_argument, "fault onset outside horizon");
    }
    if (!(fault.magnitude > 0.0)) {
      throw Error(ErrorKind::invalid_argument, "fault magnitude must be > 0");
    }
    auto it = idx.find(fault.target_node());
    if (it == idx.end()) {
      throw Error(ErrorKind::invalid_argument,
                  "fault target " + fault.target_node() + " is not a node");
    }
    fault_row = static_cast<Eigen::Index>(it->second);
  }

  const Eigen::MatrixXd m = transition_matrix(spec, idx);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise_std);

  // Burn-in so the series start near stationarity.
  constexpr std::size_t kBurnIn = 200;
  Eigen::VectorXd state = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd eps(n);
  for (std::size_t t = 0; t < kBurnIn; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) eps(i) = noise(rng);
    state = m * state + eps;
  }

  MetricBatch batch;
  batch.node_ids = ids;
  batch.values.resize(n, static_cast<Eigen::Index>(horizon));
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(n);
  for (const auto& [node, level] : spec.baseline) {
    offset(static_cast<Eigen::Index>(idx.at(node))) = level;
  }

  double queue = 0.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) eps(i) = noise(rng);
    state = m * state + eps;
    if (fault_row && t >= fault.onset) {
      queue = fault.queue_ar * queue + (1.0 - fault.queue_ar);
      state(*fault_row) += fault.magnitude * queue;
    }
    batch.values.col(static_cast<Eigen::Index>(t)) = state + offset;
    batch.timestamps.push_back(spec.start_ts +
                               static_cast<std::int64_t>(t) * spec.interval_s);
  }
  return batch;
}

TraceDependencyGraph generate_traces(const SystemSpec& spec) {
  validate(spec);
  const auto suffixes = spec.metric_suffixes();
  std::set<std::string> dropped(spec.trace_drop.begin(), spec.trace_drop.end());
  TraceDependencyGraph traces;
  for (const auto& link : spec.causal_adjacency) {
    auto caller = extract_service_name(link.from, suffixes);
    auto callee = extract_service_name(link.to, suffixes);
    if (caller == callee || dropped.count(caller) || dropped.count(callee)) {
      continue;
    }
    auto calls = static_cast<std::int64_t>(std::lround(1000.0 * std::abs(link.coefficient)));
    traces.add_calls(caller, callee, std::max<std::int64_t>(1, calls));
  }
  return traces;
}

std::map<std::string, std::string> pod_names(const SystemSpec& spec) {
  static constexpr char kHex[] = "0123456789abcdef";
  static constexpr char kAlnum[] = "bcdfghjklmnpqrstvwxz2456789";
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::map<std::string, std::string> pods;
  for (const auto& s : spec.services) {
    std::string name = s + "-";
    for (int i = 0; i < 9; ++i) name += kHex[rng() % 16];
    name += "-";
    for (int i = 0; i < 5; ++i) name += kAlnum[rng() % (sizeof(kAlnum) - 1)];
    pods[s] = name;
  }
  return pods;
}

AvpScenario default_avp_spec(std::uint64_t seed) {
  AvpScenario sc;
  SystemSpec& spec = sc.spec;
  spec.services = {"valetparking",      "authentication", "parkinglotmanager",
                   "parkingspotmanager", "mapprovider",    "vehiclecontrol",
                   "ugvbridge"};
  spec.seed = seed;
  spec.noise_std = 2.0;
  spec.persistence = 0.5;

  auto cpu = [](const std::string& s) { return s + "_cpu_by_pod"; };
  auto mem = [](const std::string& s) { return s + "_mem_by_pod"; };
  const std::string V = "valetparking", A = "authentication",
                    L = "parkinglotmanager", P = "parkingspotmanager",
                    M = "mapprovider", C = "vehiclecontrol", U = "ugvbridge";
  // 19 inter-service links over 19 distinct service pairs. Node-level acyclic;
  // parkinglotmanager<->parkingspotmanager and vehiclecontrol<->ugvbridge are
  // mutual at service level through different metrics.
  spec.causal_adjacency = {
      {cpu(V), cpu(A), 0.6}, {cpu(V), cpu(L), 0.6}, {cpu(V), cpu(P), 0.5},
      {cpu(V), cpu(M), 0.5}, {mem(V), mem(C), 0.6}, {cpu(V), cpu(U), 0.4},
      {cpu(A), cpu(L), 0.5}, {cpu(L), cpu(P), 0.5}, {cpu(P), mem(L), 0.6},
      {cpu(L), cpu(M), 0.4}, {mem(L), cpu(C), 0.5}, {cpu(L), mem(U), 0.5},
      {mem(P), mem(M), 0.6}, {cpu(P), cpu(C), 0.4}, {cpu(P), cpu(U), 0.4},
      {cpu(M), cpu(C), 0.4}, {mem(M), mem(U), 0.5}, {cpu(C), cpu(U), 0.4},
      {mem(U), mem(C), 0.5},
  };
  for (const auto& s : spec.services) {
    spec.baseline[cpu(s)] = 45.0;
    spec.baseline[mem(s)] = 30.0;
  }
  spec.trace_drop = {A};

  FaultSpec& fault = sc.fault;
  fault.kind = FaultKind::queue_overflow;
  fault.target_service = V;
  fault.target_metric = "cpu_by_pod";
  fault.onset = 1950;
  fault.magnitude = 25.0;
  fault.latent_node = "parking_queue";

  sc.truth.causal_graph = ground_truth_graph(spec);
  sc.truth.causal_graph.set_stage(Stage::context_extended);
  sc.truth.trace_graph = generate_traces(spec);
  sc.truth.fault_root = fault.latent_node;
  return sc;
}

SystemSpec random_spec(std::uint64_t seed, std::size_t services,
                       double edge_probability) {
  SystemSpec spec;
  spec.seed = seed;
  spec.persistence = 0.3;
  for (std::size_t s = 0; s < services; ++s) {
    spec.services.push_back("svc" + std::to_string(s));
  }
  auto ids = spec.node_ids();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> mag(0.3, 0.9);
  // Links only go forward in the node order, so the result is acyclic.
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      if (unit(rng) < edge_probability) {
        double c = mag(rng) * (unit(rng) < 0.5 ? -1.0 : 1.0);
        spec.causal_adjacency.push_back({ids[i], ids[j], c});
      }
    }
  }
  return spec;
}

nlohmann::json to_json(const SystemSpec& spec) {
  nlohmann::json links = nlohmann::json::array();
  for (const auto& l : spec.causal_adjacency) {
    links.push_back({{"from", l.from}, {"to", l.to}, {"coefficient", l.coefficient}});
  }
  return {{"services", spec.services},
          {"metrics_per_service", spec.metrics_per_service},
          {"causal_adjacency", links},
          {"noise_std", spec.noise_std},
          {"persistence", spec.persistence},
          {"seed", spec.seed},
          {"baseline", spec.baseline},
          {"trace_drop", spec.trace_drop}};
}

nlohmann::json to_json(const FaultSpec& fault) {
  return {{"kind", fault.kind == FaultKind::none ? "none" : "queue_overflow"},
          {"target_service", fault.target_service},
          {"target_metric", fault.target_metric},
          {"onset", fault.onset},
          {"magnitude", fault.magnitude},
          {"latent_node", fault.latent_node}};
}

}  // namespace causaldiag
