#include "causaldiag/feedback_store.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "causaldiag/error.hpp"

namespace causaldiag {

namespace fs = std::filesystem;

std::string_view to_string(FeedbackSource s) {
  return s == FeedbackSource::human ? "human" : "oracle";
}

FeedbackSource feedback_source_from_string(std::string_view s) {
  if (s == "human") return FeedbackSource::human;
  if (s == "oracle") return FeedbackSource::oracle;
  throw Error(ErrorKind::invalid_argument, "unknown feedback source '" + std::string(s) + "'");
}

std::string_view to_string(Choice c) { return c == Choice::a ? "a" : "b"; }

Choice choice_from_string(std::string_view s) {
  if (s == "a") return Choice::a;
  if (s == "b") return Choice::b;
  throw Error(ErrorKind::invalid_argument, "choice must be \"a\" or \"b\"");
}

nlohmann::json to_json(const FeedbackTriplet& t) {
  return {{"query_id", t.query_id},   {"target", t.target},
          {"preferred", t.preferred}, {"rejected", t.rejected},
          {"timestamp", t.timestamp}, {"source", std::string(to_string(t.source))}};
}

FeedbackTriplet feedback_triplet_from_json(const nlohmann::json& j) {
  try {
    FeedbackTriplet t;
    t.query_id = j.at("query_id").get<std::string>();
    t.target = j.at("target").get<std::string>();
    t.preferred = j.at("preferred").get<std::string>();
    t.rejected = j.at("rejected").get<std::string>();
    t.timestamp = j.at("timestamp").get<std::int64_t>();
    t.source = feedback_source_from_string(j.at("source").get<std::string>());
    if (t.preferred == t.rejected || t.preferred == t.target || t.rejected == t.target) {
      throw Error(ErrorKind::parse, "triplet nodes must be distinct");
    }
    return t;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::parse, std::string("invalid feedback triplet: ") + ex.what());
  }
}

nlohmann::json to_json(const QueryTriplet& q) {
  return {{"query_id", q.query_id},       {"target", q.target},
          {"candidate_a", q.candidate_a}, {"candidate_b", q.candidate_b},
          {"uncertainty", q.uncertainty}};
}

QueryTriplet query_triplet_from_json(const nlohmann::json& j) {
  try {
    QueryTriplet q;
    q.query_id = j.at("query_id").get<std::string>();
    q.target = j.at("target").get<std::string>();
    q.candidate_a = j.at("candidate_a").get<std::string>();
    q.candidate_b = j.at("candidate_b").get<std::string>();
    q.uncertainty = j.at("uncertainty").get<double>();
    if (q.candidate_a == q.candidate_b || q.candidate_a == q.target ||
        q.candidate_b == q.target) {
      throw Error(ErrorKind::parse, "query nodes must be distinct");
    }
    return q;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::parse, std::string("invalid query triplet: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------

namespace {

void write_atomically(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::invalid_argument, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorKind::invalid_argument, "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::vector<nlohmann::json> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& ex) {
      // A torn final line is what a crash during append leaves behind.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw Error(ErrorKind::parse, path.filename().string() + " line " +
                                        std::to_string(number) + ": " + ex.what());
    }
  }
  return out;
}

std::size_t id_number(const std::string& id) {
  auto dash = id.rfind('-');
  if (dash == std::string::npos) return 0;
  try {
    return static_cast<std::size_t>(std::stoull(id.substr(dash + 1)));
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace

FeedbackStore::FeedbackStore(std::size_t retrain_threshold)
    : retrain_threshold_(retrain_threshold) {
  if (retrain_threshold_ == 0) {
    throw Error(ErrorKind::invalid_argument, "retrain threshold must be positive");
  }
}

FeedbackStore::FeedbackStore(const fs::path& dir, std::size_t retrain_threshold)
    : FeedbackStore(retrain_threshold) {
  dir_ = dir;
  fs::create_directories(dir);
  load();
}

std::string FeedbackStore::pair_key(const NodeId& target, const NodeId& a,
                                    const NodeId& b) {
  return target + '\n' + std::min(a, b) + '\n' + std::max(a, b);
}

void FeedbackStore::load() {
  std::size_t trained_upto = 0;
  const fs::path state = *dir_ / "state.json";
  if (fs::exists(state)) {
    std::ifstream in(state);
    try {
      auto j = nlohmann::json::parse(in);
      issued_ = j.at("issued").get<std::size_t>();
      trained_upto = j.at("trained_upto").get<std::size_t>();
      retrains_ = j.at("retrains").get<std::size_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorKind::parse, std::string("state.json: ") + ex.what());
    }
  }
  for (const auto& j : read_jsonl(*dir_ / "feedback.jsonl")) {
    auto t = feedback_triplet_from_json(j);
    answered_ids_.insert(t.query_id);
    asked_.insert(pair_key(t.target, t.preferred, t.rejected));
    issued_ = std::max(issued_, id_number(t.query_id));
    triplets_.push_back(std::move(t));
  }
  bool stale = false;
  for (const auto& j : read_jsonl(*dir_ / "pending.jsonl")) {
    auto q = query_triplet_from_json(j);
    if (answered_ids_.count(q.query_id)) {
      stale = true;  // answered right before a crash
      continue;
    }
    asked_.insert(pair_key(q.target, q.candidate_a, q.candidate_b));
    issued_ = std::max(issued_, id_number(q.query_id));
    pending_.push_back(std::move(q));
  }
  since_retrain_ = triplets_.size() - std::min(trained_upto, triplets_.size());
  if (stale) persist_pending();
}

void FeedbackStore::persist_pending() const {
  if (!dir_) return;
  std::string content;
  for (const auto& q : pending_) content += to_json(q).dump() + '\n';
  write_atomically(*dir_ / "pending.jsonl", content);
}

void FeedbackStore::persist_state() const {
  if (!dir_) return;
  nlohmann::json j{{"issued", issued_},
                   {"trained_upto", triplets_.size() - since_retrain_},
                   {"retrains", retrains_}};
  write_atomically(*dir_ / "state.json", j.dump() + '\n');
}

void FeedbackStore::append_triplet(const FeedbackTriplet& t) const {
  if (!dir_) return;
  std::ofstream out(*dir_ / "feedback.jsonl", std::ios::binary | std::ios::app);
  out << to_json(t).dump() << '\n';
  out.flush();
  if (!out) throw Error(ErrorKind::invalid_argument, "cannot append to feedback.jsonl");
}

std::string FeedbackStore::next_query_id() {
  std::lock_guard lock(mu_);
  ++issued_;
  persist_state();
  char buf[32];
  std::snprintf(buf, sizeof buf, "q-%06zu", issued_);
  return buf;
}

void FeedbackStore::add_pending(const QueryTriplet& query) {
  std::lock_guard lock(mu_);
  if (answered_ids_.count(query.query_id) ||
      std::any_of(pending_.begin(), pending_.end(),
                  [&](const QueryTriplet& q) { return q.query_id == query.query_id; })) {
    throw Error(ErrorKind::conflict, "duplicate query id " + query.query_id);
  }
  pending_.push_back(query);
  asked_.insert(pair_key(query.target, query.candidate_a, query.candidate_b));
  issued_ = std::max(issued_, id_number(query.query_id));
  persist_pending();
}

std::optional<QueryTriplet> FeedbackStore::next_pending() const {
  std::lock_guard lock(mu_);
  if (pending_.empty()) return std::nullopt;
  return pending_.front();
}

std::optional<QueryTriplet> FeedbackStore::find_pending(const std::string& query_id) const {
  std::lock_guard lock(mu_);
  for (const auto& q : pending_) {
    if (q.query_id == query_id) return q;
  }
  return std::nullopt;
}

std::vector<QueryTriplet> FeedbackStore::pending() const {
  std::lock_guard lock(mu_);
  return pending_;
}

std::size_t FeedbackStore::pending_count() const {
  std::lock_guard lock(mu_);
  return pending_.size();
}

SubmitResult FeedbackStore::submit(const std::string& query_id, Choice choice,
                                   FeedbackSource source,
                                   std::optional<std::int64_t> timestamp) {
  std::lock_guard lock(mu_);
  if (answered_ids_.count(query_id)) {
    throw Error(ErrorKind::conflict, "query " + query_id + " already answered");
  }
  auto it = std::find_if(pending_.begin(), pending_.end(),
                         [&](const QueryTriplet& q) { return q.query_id == query_id; });
  if (it == pending_.end()) {
    throw Error(ErrorKind::not_found, "unknown query id " + query_id);
  }
  FeedbackTriplet t;
  t.query_id = query_id;
  t.target = it->target;
  t.preferred = choice == Choice::a ? it->candidate_a : it->candidate_b;
  t.rejected = choice == Choice::a ? it->candidate_b : it->candidate_a;
  t.timestamp = timestamp.value_or(std::chrono::duration_cast<std::chrono::seconds>(
                                       std::chrono::system_clock::now().time_since_epoch())
                                       .count());
  t.source = source;

  append_triplet(t);
  triplets_.push_back(t);
  answered_ids_.insert(query_id);
  pending_.erase(it);
  ++since_retrain_;
  persist_pending();
  persist_state();
  return {t, since_retrain_ >= retrain_threshold_};
}

std::vector<FeedbackTriplet> FeedbackStore::triplets() const {
  std::lock_guard lock(mu_);
  return triplets_;
}

std::size_t FeedbackStore::size() const {
  std::lock_guard lock(mu_);
  return triplets_.size();
}

std::size_t FeedbackStore::answered_since_retrain() const {
  std::lock_guard lock(mu_);
  return since_retrain_;
}

std::size_t FeedbackStore::retrain_count() const {
  std::lock_guard lock(mu_);
  return retrains_;
}

std::size_t FeedbackStore::issued_count() const {
  std::lock_guard lock(mu_);
  return issued_;
}

void FeedbackStore::mark_retrained() {
  std::lock_guard lock(mu_);
  since_retrain_ = 0;
  ++retrains_;
  persist_state();
}

bool FeedbackStore::was_asked(const NodeId& target, const NodeId& a, const NodeId& b) const {
  std::lock_guard lock(mu_);
  return asked_.count(pair_key(target, a, b)) != 0;
}

}  // namespace causaldiag
