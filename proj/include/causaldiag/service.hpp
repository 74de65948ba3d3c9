#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "causaldiag/config.hpp"

namespace causaldiag {

/// HTTP front end over one persistent feedback session.
///
///   GET  /feedback/next       oldest pending query, 404 when none
///   GET  /feedback/pending    all pending queries
///   POST /feedback/answer     {"query_id", "choice": "a"|"b"[, "source"]}
///   GET  /graph/{stage}       live graph of a stage
///   POST /rules               rule file text; replaces the active rules
///   POST /rca                 {"anomaly"?}
///   POST /run                 {"feedback_source", "budget"} -> {"run_id"}
///   GET  /run/{id}            run report
///   GET  /health
///
/// Errors are {"code", "message"} with 400, 404, 409 or 500.
class Service {
 public:
  /// Prepares data, trains the encoder and opens the store in `state_dir`.
  Service(PipelineConfig config, const std::filesystem::path& state_dir);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host, int port);
  /// Blocks until stop() is called.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace causaldiag
