#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "causaldiag/base_decoder.hpp"
#include "causaldiag/encoder.hpp"
#include "causaldiag/hrl.hpp"
#include "causaldiag/prune.hpp"
#include "causaldiag/rca.hpp"

namespace causaldiag {

struct DataConfig {
  /// Metrics JSONL and traces JSON; when metrics is empty the built-in
  /// simulator scenario is generated instead.
  std::string metrics;
  std::string traces;
  /// Optional ground-truth graph JSON for evaluation of file-based runs.
  std::string truth;
  std::size_t window = 500;
  std::size_t step = 500;
};

struct SimulatorConfig {
  std::size_t horizon = 2000;
  bool fault = true;
  std::vector<std::string> trace_drop{"authentication"};
};

struct PcConfig {
  double alpha = 0.05;
  std::size_t max_cond = 3;
};

struct FeedbackRunConfig {
  std::size_t budget = 30;
  std::size_t retrain_threshold = 10;
  double oracle_noise = 0.0;
  double timeout_s = 600.0;
  FeedbackConfig session;
};

struct RcaRunConfig {
  RcaConfig walk;
  double z_threshold = 3.0;
  std::string anomaly;  // empty: see choose_anomaly
};

struct ServiceConfig {
  int port = 8080;
  std::string state_dir = "state";
  std::string static_dir = "ui";
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  DataConfig data;
  SimulatorConfig simulator;
  PcConfig pc;
  EncoderTrainConfig encoder;
  BasePolicyConfig base_policy;
  FeedbackRunConfig feedback;
  PruneConfig prune;
  std::string rules;  // rule file applied by every run, optional
  RcaRunConfig rca;
  ServiceConfig service;

  /// Throws invalid_argument naming the offending key.
  void validate() const;
};

/// Nested YAML mapping; every key is optional and unknown keys are errors.
PipelineConfig parse_config_text(std::string_view text);
PipelineConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const PipelineConfig& config);

}  // namespace causaldiag
