#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "causaldiag/config.hpp"
#include "causaldiag/context_rules.hpp"
#include "causaldiag/encoder.hpp"
#include "causaldiag/feedback_store.hpp"
#include "causaldiag/graph.hpp"
#include "causaldiag/hrl.hpp"
#include "causaldiag/ingest.hpp"
#include "causaldiag/pc.hpp"
#include "causaldiag/rca.hpp"

namespace causaldiag {

struct PreparedData {
  MetricBatch batch;  // analysis window (the most recent one)
  TraceDependencyGraph traces;
  std::optional<CausalGraph> truth;
  /// Known fault edge (latent root -> target), used only to score the
  /// context-extended stage.
  std::optional<CausalEdge> fault_edge;
  std::vector<std::string> suffixes;
  std::vector<std::string> warnings;
};

/// Loads the configured metric/trace files, or generates the built-in
/// scenario when no metric file is configured.
PreparedData prepare_data(const PipelineConfig& config);

struct EncoderArtifacts {
  Skeleton skeleton;
  NodeFeatures features;
  EncoderParams params;
  EmbeddingTable embeddings;
  std::vector<double> loss_history;
};

/// PC skeleton, contrastive encoder training and the frozen embeddings.
EncoderArtifacts pretrain_encoder(const MetricBatch& batch, const PipelineConfig& config);

enum class RunMode { oracle, interactive };

std::string_view to_string(RunMode mode);
RunMode run_mode_from_string(std::string_view s);

struct RunOptions {
  std::string run_id = "run-1";
  RunMode mode = RunMode::oracle;
  std::optional<std::size_t> budget;  // defaults to config.feedback.budget
  std::vector<ContextRule> rules;
  std::optional<NodeId> anomaly;
  /// Shared session (e.g. the service's persistent one); when null the run
  /// uses a private in-memory store.
  FeedbackSession* session = nullptr;
  /// Polled while waiting for interactive answers.
  std::function<bool()> cancelled;
};

struct PipelineRun {
  std::string run_id;
  nlohmann::json config;
  std::map<Stage, CausalGraph> graphs;
  std::map<Stage, GraphMetrics> node_metrics;     // empty without ground truth
  std::map<Stage, GraphMetrics> service_metrics;  // empty without ground truth
  std::optional<RcaResult> rca;
  std::vector<RuleOutcome> rule_outcomes;
  std::vector<CausalEdge> dag_dropped;
  std::size_t answered = 0;
  std::size_t retrains = 0;
  bool partial = false;
  std::vector<std::string> warnings;
  double seconds = 0.0;
};

/// The requested anomaly, else the configured one, else the condition metric
/// of the first fired rule that is a node of `graph`, else detect_anomaly.
std::optional<NodeId> choose_anomaly(const PipelineConfig& config,
                                     const std::optional<NodeId>& requested,
                                     const std::vector<ContextRule>& rules,
                                     const std::vector<RuleOutcome>& outcomes,
                                     const CausalGraph& graph, const MetricBatch& batch);

/// Raw decode, feedback rounds, pruning, rule extension and RCA.
PipelineRun run_pipeline(const PipelineConfig& config, const PreparedData& data,
                         const EncoderArtifacts& encoder, const RunOptions& options);

/// Convenience: prepare, pretrain and run with a private store.
PipelineRun run_pipeline(const PipelineConfig& config, const RunOptions& options = {});

nlohmann::json report_json(const PipelineRun& run);
std::string report_text(const PipelineRun& run);

/// Feedback session configuration derived from the pipeline configuration.
FeedbackConfig session_config(const PipelineConfig& config);

}  // namespace causaldiag
