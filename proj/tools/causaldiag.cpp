#include <csignal>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "causaldiag/base_decoder.hpp"
#include "causaldiag/config.hpp"
#include "causaldiag/context_rules.hpp"
#include "causaldiag/error.hpp"
#include "causaldiag/pipeline.hpp"
#include "causaldiag/prune.hpp"
#include "causaldiag/rca.hpp"
#include "causaldiag/service.hpp"
#include "causaldiag/telemetry_sim.hpp"

using namespace causaldiag;
namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::not_found, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::parse, path + ": " + ex.what());
  }
}

void emit(const nlohmann::json& j, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream f(out);
  if (!f) throw Error(ErrorKind::invalid_argument, "cannot write " + out);
  f << j.dump(2) << "\n";
}

PipelineConfig config_from(const std::string& path) {
  return path.empty() ? PipelineConfig{} : load_config(path);
}

MetricBatch latest_window(const std::string& metrics, std::size_t window) {
  auto loaded = load_metrics(metrics, window, window);
  for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
  return loaded.batches.back();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal diagnosis for microservice telemetry"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;

  // simulate --------------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "Generate the synthetic scenario to files");
  std::string sim_dir = "sim";
  std::uint64_t sim_seed = 7;
  std::size_t horizon = 2000;
  bool no_fault = false;
  std::vector<std::string> drop{"authentication"};
  sim->add_option("--out-dir", sim_dir, "Output directory")->capture_default_str();
  sim->add_option("--seed", sim_seed)->capture_default_str();
  sim->add_option("--horizon", horizon)->capture_default_str();
  sim->add_flag("--no-fault", no_fault, "Disable the queue-overflow fault");
  sim->add_option("--trace-drop", drop, "Services missing from the traces")->delimiter(',');

  // train-encoder ---------------------------------------------------------
  auto* train = app.add_subcommand("train-encoder", "PC skeleton and contrastive encoder");
  train->add_option("--config", config_path);
  train->add_option("--out", out);

  // mine ----------------------------------------------------------------
  auto* mine = app.add_subcommand("mine", "Decode the raw causal graph");
  std::string stage = "raw";
  mine->add_option("--config", config_path);
  mine->add_option("--stage", stage)->check(CLI::IsMember({"raw"}));
  mine->add_option("--out", out);

  // run -----------------------------------------------------------------
  auto* run = app.add_subcommand("run", "Full pipeline with oracle feedback");
  std::optional<std::size_t> budget;
  std::string rules_path, anomaly;
  run->add_option("--config", config_path);
  run->add_option("--budget", budget);
  run->add_option("--rules", rules_path);
  run->add_option("--anomaly", anomaly);
  run->add_option("--json", out, "Write the JSON report here");

  // prune ---------------------------------------------------------------
  auto* prn = app.add_subcommand("prune", "Prune a graph against trace data");
  std::string graph_path, traces_path;
  double tau_conf = 0.5;
  bool keep_intra = false;
  prn->add_option("--graph", graph_path)->required();
  prn->add_option("--traces", traces_path)->required();
  prn->add_option("--tau-conf", tau_conf)->capture_default_str();
  prn->add_flag("--keep-intra", keep_intra, "Keep intra-service edges");
  prn->add_option("--out", out);

  // extend --------------------------------------------------------------
  auto* ext = app.add_subcommand("extend", "Apply context rules to a pruned graph");
  std::string metrics_path;
  std::size_t window = 500;
  ext->add_option("--graph", graph_path)->required();
  ext->add_option("--rules", rules_path)->required();
  ext->add_option("--metrics", metrics_path)->required();
  ext->add_option("--window", window)->capture_default_str();
  ext->add_option("--out", out);

  // rca -----------------------------------------------------------------
  auto* rca = app.add_subcommand("rca", "Random-walk root cause ranking");
  RcaConfig rca_cfg;
  double z_threshold = 3.0;
  rca->add_option("--graph", graph_path)->required();
  rca->add_option("--anomaly", anomaly);
  rca->add_option("--metrics", metrics_path, "Detect the anomaly from this file");
  rca->add_option("--window", window)->capture_default_str();
  rca->add_option("--z-threshold", z_threshold)->capture_default_str();
  rca->add_option("--walks", rca_cfg.walks)->capture_default_str();
  rca->add_option("--max-steps", rca_cfg.max_steps)->capture_default_str();
  rca->add_option("--restart", rca_cfg.restart_prob)->capture_default_str();
  rca->add_option("--seed", rca_cfg.seed)->capture_default_str();
  rca->add_option("--out", out);

  // eval ----------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Precision/recall of a graph against ground truth");
  std::string truth_path, level = "node";
  ev->add_option("--graph", graph_path)->required();
  ev->add_option("--truth", truth_path)->required();
  ev->add_option("--level", level)->check(CLI::IsMember({"node", "service"}));

  // serve ---------------------------------------------------------------
  auto* serve = app.add_subcommand("serve", "HTTP service");
  std::optional<int> port;
  std::string host = "0.0.0.0", state_dir;
  serve->add_option("--config", config_path);
  serve->add_option("--port", port);
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--state-dir", state_dir);

  // calibrate -----------------------------------------------------------
  auto* cal = app.add_subcommand("calibrate", "Calibrate tau_base on the configured data");
  cal->add_option("--config", config_path);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      AvpScenario sc = default_avp_spec(sim_seed);
      sc.spec.trace_drop = drop;
      if (no_fault) {
        sc.fault.kind = FaultKind::none;
      } else {
        sc.fault.onset = horizon > 60 ? horizon - 50 : horizon / 2;
      }
      fs::create_directories(sim_dir);
      auto batch = generate_metrics(sc.spec, sc.fault, horizon);
      write_metrics(fs::path(sim_dir) / "metrics.jsonl", batch, pod_names(sc.spec),
                    sc.spec.metric_suffixes());
      write_traces(fs::path(sim_dir) / "traces.json", generate_traces(sc.spec));
      emit(to_json(ground_truth_graph(sc.spec)), (fs::path(sim_dir) / "truth.json").string());
      emit({{"spec", to_json(sc.spec)}, {"fault", to_json(sc.fault)}},
           (fs::path(sim_dir) / "scenario.json").string());
      std::cout << "wrote " << batch.num_samples() << " samples of " << batch.num_nodes()
                << " metrics to " << sim_dir << "\n";
    } else if (*train || *mine) {
      auto cfg = config_from(config_path);
      auto data = prepare_data(cfg);
      for (const auto& w : data.warnings) std::cerr << "warning: " << w << "\n";
      auto enc = pretrain_encoder(data.batch, cfg);
      if (*train) {
        nlohmann::json emb = nlohmann::json::object();
        for (const auto& n : enc.embeddings.nodes()) emb[n] = vector_to_json(enc.embeddings.at(n));
        emit({{"encoder", to_json(enc.params)},
              {"skeleton", to_json(enc.skeleton)},
              {"embeddings", emb},
              {"loss_history", enc.loss_history}},
             out);
      } else {
        emit(to_json(decode_raw(enc.embeddings, cfg.base_policy)), out);
      }
    } else if (*run) {
      auto cfg = config_from(config_path);
      RunOptions opts;
      opts.budget = budget;
      if (!rules_path.empty()) opts.rules = parse_rules(rules_path);
      if (!anomaly.empty()) opts.anomaly = anomaly;
      auto result = run_pipeline(cfg, opts);
      std::cout << report_text(result);
      if (!out.empty()) emit(report_json(result), out);
    } else if (*prn) {
      PruneConfig pc;
      pc.tau_conf = tau_conf;
      pc.drop_intra_service = !keep_intra;
      auto traces = load_traces(traces_path);
      for (const auto& w : traces.warnings) std::cerr << "warning: " << w << "\n";
      std::vector<std::string> warnings;
      auto pruned = prune(graph_from_json(read_json(graph_path)), traces.graph, pc, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      emit(to_json(pruned), out);
    } else if (*ext) {
      auto applied = apply_rules(graph_from_json(read_json(graph_path)), parse_rules(rules_path),
                                 latest_window(metrics_path, window));
      nlohmann::json outcomes = nlohmann::json::array();
      for (const auto& o : applied.outcomes) {
        outcomes.push_back(to_json(o));
        std::cerr << "rule " << o.rule_id << ": " << o.reason << "\n";
      }
      emit(to_json(applied.graph), out);
    } else if (*rca) {
      auto graph = graph_from_json(read_json(graph_path));
      std::optional<NodeId> target;
      if (!anomaly.empty()) {
        target = anomaly;
      } else if (!metrics_path.empty()) {
        target = detect_anomaly(latest_window(metrics_path, window), z_threshold);
      }
      if (!target) {
        std::cerr << "error: no anomaly given or detected\n";
        return 1;
      }
      emit(to_json(random_walk_rca(graph, *target, rca_cfg)), out);
    } else if (*ev) {
      auto m = evaluate(graph_from_json(read_json(graph_path)),
                        graph_from_json(read_json(truth_path)), eval_level_from_string(level),
                        default_metric_suffixes());
      emit(to_json(m), "");
    } else if (*serve) {
      auto cfg = config_from(config_path);
      if (port) cfg.service.port = *port;
      if (state_dir.empty()) state_dir = cfg.service.state_dir;

      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);

      Service service(cfg, state_dir);
      int bound = service.start(host, cfg.service.port);
      std::cout << "listening on " << host << ":" << bound << std::endl;
      std::thread([&service, signals] {
        int sig = 0;
        sigwait(&signals, &sig);
        service.stop();
      }).detach();
      service.wait();
    } else if (*cal) {
      auto cfg = config_from(config_path);
      auto data = prepare_data(cfg);
      if (!data.truth) {
        std::cerr << "error: calibration needs a ground-truth graph (data.truth)\n";
        return 1;
      }
      auto enc = pretrain_encoder(data.batch, cfg);
      double tau = calibrate_tau_base(enc.embeddings, *data.truth);
      BasePolicyConfig bp{tau};
      auto raw = decode_raw(enc.embeddings, bp);
      auto m = evaluate(raw, *data.truth, EvalLevel::node);
      std::cout << "tau_base " << tau << "\nraw edges " << raw.edge_count() << "\nprecision "
                << m.precision << "\nrecall " << m.recall << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
