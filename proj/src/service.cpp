#include "causaldiag/service.hpp"

#include <atomic>
#include <condition_variable>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include <httplib.h>

#include "causaldiag/base_decoder.hpp"
#include "causaldiag/context_rules.hpp"
#include "causaldiag/error.hpp"
#include "causaldiag/feedback_store.hpp"
#include "causaldiag/hrl.hpp"
#include "causaldiag/pipeline.hpp"
#include "causaldiag/prune.hpp"

namespace causaldiag {

namespace {

int status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument:
    case ErrorKind::parse:
      return 400;
    case ErrorKind::not_found:
      return 404;
    case ErrorKind::conflict:
      return 409;
    case ErrorKind::degenerate:
      return 500;
  }
  return 500;
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"code", status}, {"message", message}});
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw Error(ErrorKind::parse, "request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::parse, std::string("malformed JSON body: ") + ex.what());
  }
}

}  // namespace

struct Service::Impl {
  struct RunEntry {
    std::string status = "running";
    std::optional<PipelineRun> run;
    std::string error;
  };

  PipelineConfig config;
  PreparedData data;
  EncoderArtifacts encoder;
  std::unique_ptr<FeedbackStore> store;
  std::unique_ptr<FeedbackSession> session;

  std::mutex mu;  // rules, runs
  std::vector<ContextRule> rules;
  std::map<std::string, RunEntry> runs;
  std::size_t run_counter = 0;
  std::mutex run_mu;  // one pipeline run at a time
  std::vector<std::thread> workers;
  std::atomic<bool> stopping{false};

  httplib::Server server;
  std::thread listener;
  std::mutex stop_mu;
  std::condition_variable stop_cv;
  bool stopped = false;

  Impl(PipelineConfig cfg, const std::filesystem::path& state_dir) : config(std::move(cfg)) {
    data = prepare_data(config);
    encoder = pretrain_encoder(data.batch, config);
    store = std::make_unique<FeedbackStore>(state_dir, config.feedback.retrain_threshold);
    session = std::make_unique<FeedbackSession>(
        encoder.embeddings, decode_raw(encoder.embeddings, config.base_policy), *store,
        session_config(config));
    if (!config.rules.empty()) rules = parse_rules(config.rules);
    routes();
  }

  CausalGraph live_graph(Stage stage, std::vector<RuleOutcome>* outcomes = nullptr) {
    if (stage == Stage::raw) return session->raw();
    CausalGraph adjusted = session->decode();
    if (stage == Stage::feedback_adjusted) return adjusted;
    CausalGraph pruned = prune(adjusted, data.traces, config.prune);
    if (stage == Stage::pruned) return pruned;
    std::vector<ContextRule> active;
    {
      std::lock_guard lock(mu);
      active = rules;
    }
    auto applied = apply_rules(pruned, active, data.batch, data.suffixes);
    if (outcomes) *outcomes = applied.outcomes;
    return applied.graph;
  }

  template <typename Fn>
  static void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      send_error(res, status_for(e.kind()), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  }

  void routes() {
    server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}});
    });

    server.Get("/feedback/next", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        auto q = store->next_pending();
        if (!q) return send_error(res, 404, "no pending query");
        send_json(res, 200, to_json(*q));
      });
    });

    server.Get("/feedback/pending", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& q : store->pending()) list.push_back(to_json(q));
        send_json(res, 200, {{"pending", list},
                             {"answered", store->size()},
                             {"answered_since_retrain", store->answered_since_retrain()},
                             {"retrains", store->retrain_count()}});
      });
    });

    server.Post("/feedback/answer", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto body = parse_body(req);
        if (!body.contains("query_id") || !body["query_id"].is_string() ||
            !body.contains("choice") || !body["choice"].is_string()) {
          throw Error(ErrorKind::parse, "body needs string fields query_id and choice");
        }
        auto choice = choice_from_string(body["choice"].get<std::string>());
        auto source = FeedbackSource::human;
        if (body.contains("source")) {
          source = feedback_source_from_string(body["source"].get<std::string>());
        }
        auto result = session->answer(body["query_id"].get<std::string>(), choice, source);
        send_json(res, 200, {{"accepted", true},
                             {"retrain_triggered", result.retrain_triggered},
                             {"triplet", to_json(result.triplet)}});
      });
    });

    server.Get(R"(/graph/([A-Za-z_]+))", [this](const httplib::Request& req,
                                                httplib::Response& res) {
      guarded(res, [&] {
        Stage stage;
        try {
          stage = stage_from_string(req.matches[1].str());
        } catch (const Error&) {
          return send_error(res, 404, "unknown stage '" + req.matches[1].str() + "'");
        }
        send_json(res, 200, to_json(live_graph(stage)));
      });
    });

    server.Post("/rules", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto parsed = parse_rules_text(req.body);
        {
          std::lock_guard lock(mu);
          rules = parsed;
        }
        std::vector<RuleOutcome> outcomes;
        live_graph(Stage::context_extended, &outcomes);
        nlohmann::json list = nlohmann::json::array();
        for (const auto& o : outcomes) list.push_back(to_json(o));
        send_json(res, 200, list);
      });
    });

    server.Post("/rca", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto body = parse_body(req);
        std::optional<NodeId> requested;
        if (body.contains("anomaly") && !body["anomaly"].is_null()) {
          requested = body["anomaly"].get<std::string>();
        }
        std::vector<RuleOutcome> outcomes;
        CausalGraph graph = live_graph(Stage::context_extended, &outcomes);
        std::vector<ContextRule> active;
        {
          std::lock_guard lock(mu);
          active = rules;
        }
        auto anomaly = choose_anomaly(config, requested, active, outcomes, graph, data.batch);
        if (!anomaly) return send_error(res, 404, "no anomaly detected");
        RcaConfig rc = config.rca.walk;
        rc.seed = config.seed;
        send_json(res, 200, to_json(random_walk_rca(graph, *anomaly, rc)));
      });
    });

    server.Post("/run", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { start_run(parse_body(req), res); });
    });

    server.Get(R"(/run/([A-Za-z0-9_-]+))", [this](const httplib::Request& req,
                                                  httplib::Response& res) {
      guarded(res, [&] {
        std::lock_guard lock(mu);
        auto it = runs.find(req.matches[1].str());
        if (it == runs.end()) return send_error(res, 404, "unknown run " + req.matches[1].str());
        const auto& entry = it->second;
        if (entry.run) return send_json(res, 200, report_json(*entry.run));
        nlohmann::json body{{"run_id", it->first}, {"status", entry.status}};
        if (!entry.error.empty()) body["error"] = entry.error;
        send_json(res, 200, body);
      });
    });

    if (!config.service.static_dir.empty() &&
        std::filesystem::is_directory(config.service.static_dir)) {
      server.set_mount_point("/ui", config.service.static_dir);
    }
  }

  void start_run(const nlohmann::json& body, httplib::Response& res) {
    RunOptions opts;
    opts.mode = run_mode_from_string(body.value("feedback_source", std::string("oracle")));
    if (body.contains("budget")) {
      if (!body["budget"].is_number_unsigned()) {
        throw Error(ErrorKind::parse, "budget must be a non-negative integer");
      }
      opts.budget = body["budget"].get<std::size_t>();
    }
    std::unique_lock run_lock(run_mu, std::try_to_lock);
    if (!run_lock.owns_lock()) throw Error(ErrorKind::conflict, "a run is already in progress");
    run_lock.unlock();
    {
      std::lock_guard lock(mu);
      opts.run_id = "run-" + std::to_string(++run_counter);
      opts.rules = rules;
      runs[opts.run_id] = RunEntry{};
    }
    opts.session = session.get();
    opts.cancelled = [this] { return stopping.load(); };
    std::lock_guard lock(mu);
    workers.emplace_back([this, opts] {
      std::lock_guard serial(run_mu);
      RunEntry entry;
      try {
        entry.run = run_pipeline(config, data, encoder, opts);
        entry.status = entry.run->partial ? "partial" : "completed";
      } catch (const std::exception& e) {
        entry.status = "failed";
        entry.error = e.what();
      }
      std::lock_guard l(mu);
      runs[opts.run_id] = std::move(entry);
    });
    send_json(res, 200, {{"run_id", opts.run_id}});
  }
};

Service::Service(PipelineConfig config, const std::filesystem::path& state_dir)
    : impl_(std::make_unique<Impl>(std::move(config), state_dir)) {}

Service::~Service() {
  stop();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(impl_->mu);
    workers.swap(impl_->workers);
  }
  for (auto& t : workers) t.join();
}

int Service::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) {
    throw Error(ErrorKind::invalid_argument, "cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void Service::wait() {
  std::unique_lock lock(impl_->stop_mu);
  impl_->stop_cv.wait(lock, [this] { return impl_->stopped; });
}

void Service::stop() {
  impl_->stopping = true;
  impl_->server.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
  {
    std::lock_guard lock(impl_->stop_mu);
    impl_->stopped = true;
  }
  impl_->stop_cv.notify_all();
}

}  // namespace causaldiag
