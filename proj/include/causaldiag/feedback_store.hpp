#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "causaldiag/graph.hpp"

namespace causaldiag {

enum class FeedbackSource { human, oracle };
enum class Choice { a, b };

std::string_view to_string(FeedbackSource s);
FeedbackSource feedback_source_from_string(std::string_view s);
std::string_view to_string(Choice c);
Choice choice_from_string(std::string_view s);

/// One recorded expert preference. `query_id` links it to the answered query.
struct FeedbackTriplet {
  std::string query_id;
  NodeId target;
  NodeId preferred;
  NodeId rejected;
  std::int64_t timestamp = 0;
  FeedbackSource source = FeedbackSource::oracle;

  friend bool operator==(const FeedbackTriplet&, const FeedbackTriplet&) = default;
};

struct QueryTriplet {
  std::string query_id;
  NodeId target;
  NodeId candidate_a;
  NodeId candidate_b;
  double uncertainty = 0.0;

  friend bool operator==(const QueryTriplet&, const QueryTriplet&) = default;
};

nlohmann::json to_json(const FeedbackTriplet& t);
FeedbackTriplet feedback_triplet_from_json(const nlohmann::json& j);
nlohmann::json to_json(const QueryTriplet& q);
QueryTriplet query_triplet_from_json(const nlohmann::json& j);

struct SubmitResult {
  FeedbackTriplet triplet;
  bool retrain_triggered = false;
};

/// Append-only history of answered queries plus a FIFO queue of pending ones.
/// With a directory the store persists itself as
///   feedback.jsonl  one triplet per line, append-only
///   pending.jsonl   pending queries in queue order
///   state.json      counters
/// and reloads from those files on construction. All members are safe to
/// call concurrently.
class FeedbackStore {
 public:
  explicit FeedbackStore(std::size_t retrain_threshold = 10);
  FeedbackStore(const std::filesystem::path& dir, std::size_t retrain_threshold = 10);

  FeedbackStore(const FeedbackStore&) = delete;
  FeedbackStore& operator=(const FeedbackStore&) = delete;

  const std::optional<std::filesystem::path>& directory() const { return dir_; }
  std::size_t retrain_threshold() const { return retrain_threshold_; }

  /// Fresh id "q-000001", "q-000002", ...; the counter is persisted.
  std::string next_query_id();

  /// Throws conflict if the id is already pending or answered.
  void add_pending(const QueryTriplet& query);
  std::optional<QueryTriplet> next_pending() const;
  std::optional<QueryTriplet> find_pending(const std::string& query_id) const;
  std::vector<QueryTriplet> pending() const;
  std::size_t pending_count() const;

  /// Records the answer: the chosen candidate becomes `preferred`.
  /// Throws not_found for unknown ids and conflict("already answered").
  SubmitResult submit(const std::string& query_id, Choice choice, FeedbackSource source,
                      std::optional<std::int64_t> timestamp = std::nullopt);

  std::vector<FeedbackTriplet> triplets() const;
  std::size_t size() const;
  std::size_t answered_since_retrain() const;
  std::size_t retrain_count() const;
  std::size_t issued_count() const;
  void mark_retrained();

  /// Whether {a, b} was already asked (pending or answered) for `target`.
  bool was_asked(const NodeId& target, const NodeId& a, const NodeId& b) const;

 private:
  void load();
  void persist_pending() const;
  void persist_state() const;
  void append_triplet(const FeedbackTriplet& t) const;
  static std::string pair_key(const NodeId& target, const NodeId& a, const NodeId& b);

  mutable std::mutex mu_;
  std::optional<std::filesystem::path> dir_;
  std::size_t retrain_threshold_;
  std::vector<FeedbackTriplet> triplets_;
  std::vector<QueryTriplet> pending_;
  std::set<std::string> answered_ids_;
  std::set<std::string> asked_;
  std::size_t issued_ = 0;
  std::size_t since_retrain_ = 0;
  std::size_t retrains_ = 0;
};

}  // namespace causaldiag
