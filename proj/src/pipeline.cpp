#include "causaldiag/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "causaldiag/base_decoder.hpp"
#include "causaldiag/error.hpp"
#include "causaldiag/prune.hpp"
#include "causaldiag/telemetry_sim.hpp"

namespace causaldiag {

std::string_view to_string(RunMode mode) {
  return mode == RunMode::oracle ? "oracle" : "interactive";
}

RunMode run_mode_from_string(std::string_view s) {
  if (s == "oracle") return RunMode::oracle;
  if (s == "interactive") return RunMode::interactive;
  throw Error(ErrorKind::invalid_argument, "unknown feedback source '" + std::string(s) + "'");
}

PreparedData prepare_data(const PipelineConfig& config) {
  config.validate();
  PreparedData d;
  d.suffixes = config.prune.suffixes;
  if (config.data.metrics.empty()) {
    AvpScenario sc = default_avp_spec(config.seed);
    sc.spec.trace_drop = config.simulator.trace_drop;
    const std::size_t horizon = config.simulator.horizon;
    if (config.data.window > horizon) {
      throw Error(ErrorKind::invalid_argument, "window exceeds data");
    }
    if (config.simulator.fault) {
      sc.fault.onset = horizon > 60 ? horizon - 50 : horizon / 2;
    } else {
      sc.fault.kind = FaultKind::none;
    }
    MetricBatch all = generate_metrics(sc.spec, sc.fault, horizon);
    d.batch = all.slice(horizon - config.data.window, config.data.window);
    d.traces = generate_traces(sc.spec);
    d.truth = ground_truth_graph(sc.spec);
    if (config.simulator.fault) {
      d.fault_edge = CausalEdge{sc.fault.latent_node, sc.fault.target_node(), 1.0,
                                Provenance::rule};
    }
    return d;
  }

  auto loaded = load_metrics(config.data.metrics, config.data.window, config.data.step);
  d.warnings = loaded.warnings;
  if (loaded.batches.empty()) throw Error(ErrorKind::invalid_argument, "no metric window");
  d.batch = loaded.batches.back();
  if (!config.data.traces.empty()) {
    auto traces = load_traces(config.data.traces);
    d.traces = traces.graph;
    d.warnings.insert(d.warnings.end(), traces.warnings.begin(), traces.warnings.end());
  } else {
    d.warnings.push_back("no trace file configured; pruning will remove every edge");
  }
  if (!config.data.truth.empty()) {
    std::ifstream in(config.data.truth);
    if (!in) throw Error(ErrorKind::not_found, "cannot open " + config.data.truth);
    try {
      d.truth = graph_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorKind::parse, std::string("invalid ground truth: ") + ex.what());
    }
  }
  return d;
}

EncoderArtifacts pretrain_encoder(const MetricBatch& batch, const PipelineConfig& config) {
  EncoderArtifacts a;
  a.skeleton = pc_skeleton(batch, config.pc.alpha, config.pc.max_cond);
  a.features = compute_features(batch);
  EncoderTrainConfig ec = config.encoder;
  ec.seed = config.seed;
  auto trained = train_contrastive(a.features, a.skeleton, ec);
  a.params = trained.params;
  a.loss_history = std::move(trained.loss_history);
  a.embeddings = forward(a.params, a.features, a.skeleton);
  return a;
}

FeedbackConfig session_config(const PipelineConfig& config) {
  FeedbackConfig fc = config.feedback.session;
  fc.seed = config.seed;
  return fc;
}

std::optional<NodeId> choose_anomaly(const PipelineConfig& config,
                                     const std::optional<NodeId>& requested,
                                     const std::vector<ContextRule>& rules,
                                     const std::vector<RuleOutcome>& outcomes,
                                     const CausalGraph& graph, const MetricBatch& batch) {
  if (requested) return requested;
  if (!config.rca.anomaly.empty()) return config.rca.anomaly;
  // A fired rule is an alert on its condition metric.
  for (std::size_t r = 0; r < rules.size() && r < outcomes.size(); ++r) {
    const auto& metric = rules[r].condition.metric;
    if (outcomes[r].fired && graph.has_node(metric)) return metric;
  }
  return detect_anomaly(batch, config.rca.z_threshold);
}

PipelineRun run_pipeline(const PipelineConfig& config, const PreparedData& data,
                         const EncoderArtifacts& encoder, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  PipelineRun run;
  run.run_id = options.run_id;
  run.config = to_json(config);
  run.warnings = data.warnings;
  const std::size_t budget = options.budget.value_or(config.feedback.budget);

  CausalGraph raw = decode_raw(encoder.embeddings, config.base_policy);
  run.graphs.emplace(Stage::raw, raw);

  std::optional<FeedbackStore> own_store;
  std::optional<FeedbackSession> own_session;
  FeedbackSession* session = options.session;
  if (!session) {
    own_store.emplace(config.feedback.retrain_threshold);
    own_session.emplace(encoder.embeddings, raw, *own_store, session_config(config));
    session = &*own_session;
  }
  FeedbackStore& store = session->store();

  if (options.mode == RunMode::oracle) {
    if (budget > 0 && !data.truth) {
      throw Error(ErrorKind::invalid_argument, "oracle feedback needs a ground-truth graph");
    }
    std::mt19937_64 rng(config.seed ^ 0x5851F42D4C957F2DULL);
    while (run.answered < budget) {
      if (store.pending_count() == 0 && session->generate_round().empty()) {
        run.warnings.push_back("feedback stopped early: no unasked candidate pairs left");
        break;
      }
      auto q = store.next_pending();
      auto choice = oracle_answer(*q, *data.truth, config.feedback.oracle_noise, rng);
      session->answer(q->query_id, choice, FeedbackSource::oracle);
      ++run.answered;
    }
  } else {
    const std::size_t base = store.size();
    const auto deadline =
        start + std::chrono::duration<double>(config.feedback.timeout_s);
    while (store.size() - base < budget) {
      if (store.pending_count() == 0 && session->generate_round().empty()) {
        run.warnings.push_back("feedback stopped early: no unasked candidate pairs left");
        break;
      }
      if (std::chrono::steady_clock::now() > deadline ||
          (options.cancelled && options.cancelled())) {
        run.partial = true;
        run.warnings.push_back("interactive feedback incomplete");
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    run.answered = store.size() - base;
  }
  if (run.answered > 0 && store.answered_since_retrain() > 0) session->retrain();
  run.retrains = session->retrain_count();

  CausalGraph adjusted = session->decode();
  run.graphs.emplace(Stage::feedback_adjusted, adjusted);

  CausalGraph pruned = prune(adjusted, data.traces, config.prune, &run.warnings);
  run.graphs.emplace(Stage::pruned, pruned);

  auto applied = apply_rules(pruned, options.rules, data.batch, data.suffixes);
  run.rule_outcomes = applied.outcomes;
  run.dag_dropped = applied.dropped;
  run.graphs.emplace(Stage::context_extended, applied.graph);

  auto anomaly = choose_anomaly(config, options.anomaly, options.rules, applied.outcomes,
                                applied.graph, data.batch);
  if (anomaly) {
    RcaConfig rc = config.rca.walk;
    rc.seed = config.seed;
    run.rca = random_walk_rca(applied.graph, *anomaly, rc);
  } else {
    run.warnings.push_back("no anomaly above the z threshold; RCA skipped");
  }

  if (data.truth) {
    CausalGraph extended_truth = *data.truth;
    if (data.fault_edge) extended_truth.add_edge(*data.fault_edge);
    for (const auto& [stage, graph] : run.graphs) {
      const CausalGraph& gt = stage == Stage::context_extended ? extended_truth : *data.truth;
      run.node_metrics[stage] = evaluate(graph, gt, EvalLevel::node, data.suffixes);
      run.service_metrics[stage] = evaluate(graph, gt, EvalLevel::service, data.suffixes);
    }
  }
  run.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

PipelineRun run_pipeline(const PipelineConfig& config, const RunOptions& options) {
  auto data = prepare_data(config);
  auto encoder = pretrain_encoder(data.batch, config);
  RunOptions opts = options;
  if (opts.rules.empty() && !config.rules.empty()) opts.rules = parse_rules(config.rules);
  return run_pipeline(config, data, encoder, opts);
}

nlohmann::json report_json(const PipelineRun& run) {
  nlohmann::json stages = nlohmann::json::array();
  for (Stage s : kAllStages) {
    auto it = run.graphs.find(s);
    if (it == run.graphs.end()) continue;
    nlohmann::json row{{"stage", std::string(to_string(s))},
                       {"edges", it->second.edge_count()},
                       {"graph", to_json(it->second)}};
    auto nm = run.node_metrics.find(s);
    row["node"] = nm == run.node_metrics.end() ? nlohmann::json(nullptr) : to_json(nm->second);
    auto sm = run.service_metrics.find(s);
    row["service"] =
        sm == run.service_metrics.end() ? nlohmann::json(nullptr) : to_json(sm->second);
    stages.push_back(std::move(row));
  }
  nlohmann::json outcomes = nlohmann::json::array();
  for (const auto& o : run.rule_outcomes) outcomes.push_back(to_json(o));
  nlohmann::json dropped = nlohmann::json::array();
  for (const auto& e : run.dag_dropped) {
    dropped.push_back({{"source", e.source}, {"target", e.target}, {"confidence", e.confidence}});
  }
  return {{"run_id", run.run_id},
          {"status", run.partial ? "partial" : "completed"},
          {"config", run.config},
          {"stages", stages},
          {"rca", run.rca ? to_json(*run.rca) : nlohmann::json(nullptr)},
          {"rule_outcomes", outcomes},
          {"dag_dropped", dropped},
          {"answered", run.answered},
          {"retrains", run.retrains},
          {"warnings", run.warnings},
          {"seconds", run.seconds}};
}

std::string report_text(const PipelineRun& run) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-18s %6s | %9s %7s %6s | %9s %7s %6s\n", "stage", "edges",
                "precision", "recall", "F1", "svc prec", "svc rec", "svc F1");
  out << line;
  auto cell = [](const std::map<Stage, GraphMetrics>& m, Stage s, double GraphMetrics::*f) {
    auto it = m.find(s);
    if (it == m.end()) return std::string("—");
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", it->second.*f);
    return std::string(buf);
  };
  for (Stage s : kAllStages) {
    auto it = run.graphs.find(s);
    if (it == run.graphs.end()) continue;
    std::snprintf(line, sizeof line, "%-18s %6zu | %9s %7s %6s | %9s %7s %6s\n",
                  std::string(to_string(s)).c_str(), it->second.edge_count(),
                  cell(run.node_metrics, s, &GraphMetrics::precision).c_str(),
                  cell(run.node_metrics, s, &GraphMetrics::recall).c_str(),
                  cell(run.node_metrics, s, &GraphMetrics::f1).c_str(),
                  cell(run.service_metrics, s, &GraphMetrics::precision).c_str(),
                  cell(run.service_metrics, s, &GraphMetrics::recall).c_str(),
                  cell(run.service_metrics, s, &GraphMetrics::f1).c_str());
    out << line;
  }
  if (run.rca) {
    out << "\nroot-cause ranking for " << run.rca->anomaly << ":\n";
    std::size_t rank = 0;
    for (const auto& r : run.rca->ranked) {
      if (++rank > 5) break;
      std::snprintf(line, sizeof line, "  %zu. %-32s %.3f\n", rank, r.node.c_str(), r.score);
      out << line;
    }
  }
  for (const auto& o : run.rule_outcomes) {
    out << "rule " << o.rule_id << ": " << o.reason << "\n";
  }
  for (const auto& w : run.warnings) out << "warning: " << w << "\n";
  return out.str();
}

}  // namespace causaldiag
