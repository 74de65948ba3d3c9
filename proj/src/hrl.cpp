#include "causaldiag/hrl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "causaldiag/error.hpp"

namespace causaldiag {

Eigen::VectorXd pair_state(const EmbeddingTable& embeddings, const NodeId& target,
                           const NodeId& candidate) {
  Eigen::VectorXd t = embeddings.at(target);
  Eigen::VectorXd c = embeddings.at(candidate);
  Eigen::VectorXd s(t.size() + c.size());
  s << t, c;
  return s;
}

// ---------------------------------------------------------------------------
// Reward model

double reward_score(const Mlp& model, const Eigen::VectorXd& target,
                    const Eigen::VectorXd& candidate) {
  Eigen::VectorXd s(target.size() + candidate.size());
  s << target, candidate;
  return model.forward(s);
}

double reward_high(const Mlp& model, const NodeId& target,
                   const std::vector<NodeId>& neighbors, const EmbeddingTable& embeddings) {
  double total = 0.0;
  for (const auto& n : neighbors) {
    total += model.forward(pair_state(embeddings, target, n));
  }
  return total;
}

double bradley_terry_loss(const Mlp& model, const std::vector<FeedbackTriplet>& triplets,
                          const EmbeddingTable& embeddings, MlpGrad* grad) {
  if (triplets.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(triplets.size());
  double loss = 0.0;
  Mlp::Cache cp, cr;
  for (const auto& t : triplets) {
    double rp = model.forward(pair_state(embeddings, t.target, t.preferred), cp);
    double rr = model.forward(pair_state(embeddings, t.target, t.rejected), cr);
    double diff = rp - rr;
    loss -= log_sigmoid(diff) * scale;
    if (grad) {
      // d/d diff of -log sigmoid(diff) = -(1 - sigmoid(diff)) = -sigmoid(-diff)
      double g = -sigmoid(-diff) * scale;
      model.backward(cp, g, *grad);
      model.backward(cr, -g, *grad);
    }
  }
  return loss;
}

Mlp train_reward_model(const std::vector<FeedbackTriplet>& triplets,
                       const EmbeddingTable& embeddings, const RewardTrainConfig& config) {
  if (triplets.empty()) {
    throw Error(ErrorKind::invalid_argument, "reward model needs at least one triplet");
  }
  std::mt19937_64 rng(config.seed);
  Mlp model = Mlp::init(2 * embeddings.dim(), config.hidden, rng, false);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    MlpGrad grad(model);
    bradley_terry_loss(model, triplets, embeddings, &grad);
    model.apply(grad, config.lr);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Low-level policy

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw Error(ErrorKind::invalid_argument, "replay capacity must be positive");
}

void ReplayBuffer::push(ReplaySample sample) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(sample));
  } else {
    items_[next_] = std::move(sample);
  }
  next_ = (next_ + 1) % capacity_;
}

void ReplayBuffer::clear() {
  items_.clear();
  next_ = 0;
}

LowPolicyParams LowPolicyParams::init(std::size_t embedding_dim, std::size_t hidden,
                                      std::uint64_t seed, std::size_t replay_capacity) {
  std::mt19937_64 rng(seed);
  LowPolicyParams p;
  p.actor = Mlp::init(2 * embedding_dim, hidden, rng, true);
  p.critic = Mlp::init(2 * embedding_dim + 1, hidden, rng, false);
  p.replay = ReplayBuffer(replay_capacity);
  return p;
}

double low_policy_probability(const LowPolicyParams& policy, const Eigen::VectorXd& target,
                              const Eigen::VectorXd& candidate) {
  Eigen::VectorXd s(target.size() + candidate.size());
  s << target, candidate;
  return sigmoid(policy.actor.forward(s));
}

namespace {

Eigen::VectorXd critic_input(const Eigen::VectorXd& state, double action) {
  Eigen::VectorXd x(state.size() + 1);
  x << state, action;
  return x;
}

}  // namespace

double critic_loss(const Mlp& critic, const std::vector<ReplaySample>& batch, MlpGrad* grad) {
  if (batch.empty()) throw Error(ErrorKind::invalid_argument, "empty replay batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  Mlp::Cache cache;
  for (const auto& s : batch) {
    double q = critic.forward(critic_input(s.state, s.action), cache);
    double err = q - s.reward;
    loss += 0.5 * err * err * scale;
    if (grad) critic.backward(cache, err * scale, *grad);
  }
  return loss;
}

double actor_loss(const Mlp& actor, const Mlp& critic, const std::vector<ReplaySample>& batch,
                  MlpGrad* grad) {
  if (batch.empty()) throw Error(ErrorKind::invalid_argument, "empty replay batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  Mlp::Cache ca, cc;
  MlpGrad scratch(critic);
  for (const auto& s : batch) {
    double a = sigmoid(actor.forward(s.state, ca));
    double q = critic.forward(critic_input(s.state, a), cc);
    loss -= q * scale;
    if (grad) {
      Eigen::VectorXd dx = critic.backward(cc, 1.0, scratch);
      double dq_da = dx(dx.size() - 1);
      actor.backward(ca, -dq_da * a * (1.0 - a) * scale, *grad);
    }
  }
  return loss;
}

void critic_update(LowPolicyParams& policy, const std::vector<ReplaySample>& batch) {
  MlpGrad cg(policy.critic);
  critic_loss(policy.critic, batch, &cg);
  policy.critic.apply(cg, policy.critic_lr);
}

void ddpg_update(LowPolicyParams& policy, const std::vector<ReplaySample>& batch) {
  if (batch.empty()) throw Error(ErrorKind::invalid_argument, "empty replay batch");
  critic_update(policy, batch);
  MlpGrad ag(policy.actor);
  actor_loss(policy.actor, policy.critic, batch, &ag);
  policy.actor.apply(ag, policy.actor_lr);
}

// ---------------------------------------------------------------------------
// High-level policy

NodeId select_target_node(const HighPolicyState& state, const std::vector<NodeId>& candidates,
                          std::mt19937_64& rng) {
  if (candidates.empty()) throw Error(ErrorKind::invalid_argument, "no candidate targets");
  if (!(state.epsilon >= 0.0 && state.epsilon <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "epsilon must lie in [0,1]");
  }
  if (candidates.size() == 1) return candidates.front();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < state.epsilon) {
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    return candidates[pick(rng)];
  }
  const NodeId* best = nullptr;
  double best_value = 0.0;
  for (const auto& c : candidates) {
    auto it = state.q.find(c);
    double v = it == state.q.end() ? 0.0 : it->second.select - it->second.skip;
    if (!best || v > best_value || (v == best_value && c < *best)) {
      best = &c;
      best_value = v;
    }
  }
  return *best;
}

void q_update(HighPolicyState& state, const NodeId& node, HighAction action, double reward) {
  auto& v = state.q[node];
  double& q = action == HighAction::select ? v.select : v.skip;
  double next = std::max(v.select, v.skip);
  q += state.alpha * (reward + state.gamma * next - q);
}

// ---------------------------------------------------------------------------
// Queries

double query_uncertainty(double probability) {
  return 1.0 - 2.0 * std::abs(probability - 0.5);
}

QueryTriplet generate_query(const LowPolicyParams& policy, const CausalGraph& graph,
                            const NodeId& target, const EmbeddingTable& embeddings,
                            const std::string& query_id,
                            const std::function<bool(const NodeId&, const NodeId&)>& already_asked) {
  auto preds = graph.predecessors(target);
  if (preds.size() < 2) {
    throw Error(ErrorKind::invalid_argument, "insufficient candidates for " + target);
  }
  const Eigen::VectorXd et = embeddings.at(target);
  std::vector<std::pair<double, NodeId>> ranked;
  for (const auto& c : preds) {
    ranked.emplace_back(query_uncertainty(low_policy_probability(policy, et, embeddings.at(c))),
                        c);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
    return x.first > y.first || (x.first == y.first && x.second < y.second);
  });
  // Pairs in order of their weaker member's rank, so the most uncertain
  // unasked pair comes first.
  for (std::size_t hi = 1; hi < ranked.size(); ++hi) {
    for (std::size_t lo = 0; lo < hi; ++lo) {
      const auto& a = ranked[lo];
      const auto& b = ranked[hi];
      if (already_asked && already_asked(a.second, b.second)) continue;
      QueryTriplet q;
      q.query_id = query_id;
      q.target = target;
      q.candidate_a = std::min(a.second, b.second);
      q.candidate_b = std::max(a.second, b.second);
      q.uncertainty = 0.5 * (a.first + b.first);
      return q;
    }
  }
  throw Error(ErrorKind::conflict, "every candidate pair for " + target + " was already asked");
}

Choice oracle_answer(const QueryTriplet& query, const CausalGraph& ground_truth, double noise,
                     std::mt19937_64& rng) {
  const CausalEdge* ea = ground_truth.find_edge(query.candidate_a, query.target);
  const CausalEdge* eb = ground_truth.find_edge(query.candidate_b, query.target);
  Choice choice;
  if (ea && !eb) {
    choice = Choice::a;
  } else if (eb && !ea) {
    choice = Choice::b;
  } else if (ea && eb && ea->confidence != eb->confidence) {
    choice = ea->confidence > eb->confidence ? Choice::a : Choice::b;
  } else {
    choice = query.candidate_a <= query.candidate_b ? Choice::a : Choice::b;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < noise) choice = choice == Choice::a ? Choice::b : Choice::a;
  return choice;
}

CausalGraph decode_feedback_adjusted(const LowPolicyParams& policy,
                                     const EmbeddingTable& embeddings, double tau_policy,
                                     const CausalGraph* candidates) {
  CausalGraph out(Stage::feedback_adjusted);
  for (const auto& n : embeddings.nodes()) out.add_node(n);
  auto consider = [&](const NodeId& c, const NodeId& t) {
    double p = low_policy_probability(policy, embeddings.at(t), embeddings.at(c));
    if (p > tau_policy) out.add_edge({c, t, p, Provenance::policy});
  };
  if (candidates) {
    for (const auto& e : candidates->edges()) consider(e.source, e.target);
  } else {
    for (const auto& c : embeddings.nodes()) {
      for (const auto& t : embeddings.nodes()) {
        if (c != t) consider(c, t);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Session

namespace {

nlohmann::json high_to_json(const HighPolicyState& h) {
  nlohmann::json q = nlohmann::json::object();
  for (const auto& [node, v] : h.q) q[node] = {v.select, v.skip};
  return {{"q", q}, {"epsilon", h.epsilon}, {"alpha", h.alpha}, {"gamma", h.gamma}};
}

HighPolicyState high_from_json(const nlohmann::json& j) {
  HighPolicyState h;
  for (const auto& [node, v] : j.at("q").items()) {
    h.q[node] = {v.at(0).get<double>(), v.at(1).get<double>()};
  }
  h.epsilon = j.at("epsilon").get<double>();
  h.alpha = j.at("alpha").get<double>();
  h.gamma = j.at("gamma").get<double>();
  return h;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

FeedbackSession::FeedbackSession(EmbeddingTable embeddings, CausalGraph raw,
                                 FeedbackStore& store, FeedbackConfig config)
    : embeddings_(std::move(embeddings)),
      raw_(std::move(raw)),
      store_(store),
      config_(config) {
  policy_ = LowPolicyParams::init(embeddings_.dim(), config_.policy_hidden, config_.seed,
                                  config_.replay_capacity);
  policy_.exploration_std = config_.exploration_std;
  policy_.actor_lr = config_.actor_lr;
  policy_.critic_lr = config_.critic_lr;
  high_.epsilon = config_.epsilon;
  high_.alpha = config_.q_alpha;

  const auto& dir = store_.directory();
  if (dir && std::filesystem::exists(*dir / "policy.json")) {
    std::ifstream in(*dir / "policy.json");
    try {
      auto j = nlohmann::json::parse(in);
      reward_ = mlp_from_json(j.at("reward_model"));
      policy_.actor = mlp_from_json(j.at("actor"));
      policy_.critic = mlp_from_json(j.at("critic"));
      high_ = high_from_json(j.at("high"));
      retrains_ = j.at("retrains").get<std::size_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorKind::parse, std::string("policy.json: ") + ex.what());
    }
    if (policy_.actor.input_dim() != 2 * embeddings_.dim()) {
      throw Error(ErrorKind::conflict, "stored policy does not match embedding dimension");
    }
  }
}

std::vector<QueryTriplet> FeedbackSession::generate_round() {
  std::lock_guard lock(mu_);
  std::vector<NodeId> targets;
  for (const auto& n : raw_.nodes()) {
    if (raw_.predecessors(n).size() >= 2) targets.push_back(n);
  }
  std::mt19937_64 rng(mix(config_.seed, store_.issued_count()));
  auto asked = [&](const NodeId& target) {
    return [this, target](const NodeId& a, const NodeId& b) {
      return store_.was_asked(target, a, b);
    };
  };
  std::vector<QueryTriplet> issued;
  while (issued.size() < config_.targets_per_round && !targets.empty()) {
    NodeId t = select_target_node(high_, targets, rng);
    targets.erase(std::find(targets.begin(), targets.end(), t));
    QueryTriplet q;
    try {
      q = generate_query(policy_, raw_, t, embeddings_, "", asked(t));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::conflict) continue;
      throw;
    }
    q.query_id = store_.next_query_id();
    store_.add_pending(q);
    issued.push_back(q);
  }
  return issued;
}

SubmitResult FeedbackSession::answer(const std::string& query_id, Choice choice,
                                     FeedbackSource source) {
  std::lock_guard lock(mu_);
  auto result = store_.submit(query_id, choice, source);
  if (result.retrain_triggered) retrain_locked();
  return result;
}

void FeedbackSession::retrain() {
  std::lock_guard lock(mu_);
  retrain_locked();
}

void FeedbackSession::retrain_locked() {
  const auto triplets = store_.triplets();
  RewardTrainConfig rc = config_.reward;
  rc.seed = config_.seed;
  reward_ = train_reward_model(triplets, embeddings_, rc);

  struct Pair {
    Eigen::VectorXd state;
    double reward;
  };
  std::vector<Pair> pairs;
  for (const auto& e : raw_.edges()) {
    auto s = pair_state(embeddings_, e.target, e.source);
    pairs.push_back({s, reward_.forward(s)});
  }
  if (!pairs.empty()) {
    double mean = 0.0;
    for (const auto& p : pairs) mean += p.reward;
    mean /= static_cast<double>(pairs.size());
    double var = 0.0;
    for (const auto& p : pairs) var += (p.reward - mean) * (p.reward - mean);
    double sd = std::sqrt(var / static_cast<double>(pairs.size()));
    for (auto& p : pairs) p.reward = sd > 1e-12 ? (p.reward - mean) / sd : 0.0;

    std::mt19937_64 rng(mix(config_.seed ^ 0xD1B54A32D192ED03ULL, retrains_));
    std::normal_distribution<double> noise(0.0, policy_.exploration_std);
    policy_.replay.clear();
    for (std::size_t copy = 0; copy < config_.replay_copies; ++copy) {
      for (const auto& p : pairs) {
        double a = sigmoid(policy_.actor.forward(p.state)) + noise(rng);
        a = std::clamp(a, 0.0, 1.0);
        // Acting towards an edge pays off in proportion to the centered reward.
        policy_.replay.push({p.state, a, (2.0 * a - 1.0) * p.reward});
      }
    }
    std::uniform_int_distribution<std::size_t> pick(0, policy_.replay.size() - 1);
    const std::size_t batch_size = std::min(config_.ddpg_batch, policy_.replay.size());
    std::vector<ReplaySample> batch(batch_size);
    for (std::size_t u = 0; u < config_.critic_warmup; ++u) {
      for (auto& b : batch) b = policy_.replay[pick(rng)];
      critic_update(policy_, batch);
    }
    for (std::size_t u = 0; u < config_.ddpg_updates; ++u) {
      for (auto& b : batch) b = policy_.replay[pick(rng)];
      ddpg_update(policy_, batch);
    }
  }

  for (const auto& n : raw_.nodes()) {
    auto preds = raw_.predecessors(n);
    if (preds.empty()) continue;
    q_update(high_, n, HighAction::select, reward_high(reward_, n, preds, embeddings_));
    q_update(high_, n, HighAction::skip, 0.0);
  }
  ++retrains_;
  store_.mark_retrained();
  save_locked();
}

void FeedbackSession::save_locked() const {
  const auto& dir = store_.directory();
  if (!dir) return;
  auto path = *dir / "policy.json";
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << state_json().dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

bool FeedbackSession::trained() const {
  std::lock_guard lock(mu_);
  return retrains_ > 0;
}

std::size_t FeedbackSession::retrain_count() const {
  std::lock_guard lock(mu_);
  return retrains_;
}

CausalGraph FeedbackSession::decode() const {
  std::lock_guard lock(mu_);
  if (retrains_ == 0) {
    CausalGraph g(Stage::feedback_adjusted);
    for (const auto& n : raw_.nodes()) g.add_node(n);
    for (const auto& e : raw_.edges()) g.add_edge(e);
    return g;
  }
  return decode_feedback_adjusted(policy_, embeddings_, config_.tau_policy, &raw_);
}

Mlp FeedbackSession::reward_model() const {
  std::lock_guard lock(mu_);
  return reward_;
}

LowPolicyParams FeedbackSession::policy() const {
  std::lock_guard lock(mu_);
  return policy_;
}

HighPolicyState FeedbackSession::high_policy() const {
  std::lock_guard lock(mu_);
  return high_;
}

nlohmann::json FeedbackSession::state_json() const {
  nlohmann::json j{{"actor", to_json(policy_.actor)},
                   {"critic", to_json(policy_.critic)},
                   {"high", high_to_json(high_)},
                   {"retrains", retrains_}};
  j["reward_model"] = retrains_ > 0 ? to_json(reward_) : nlohmann::json(nullptr);
  return j;
}

}  // namespace causaldiag
