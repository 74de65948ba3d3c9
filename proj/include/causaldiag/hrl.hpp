#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "causaldiag/encoder.hpp"
#include "causaldiag/feedback_store.hpp"
#include "causaldiag/graph.hpp"
#include "causaldiag/nn.hpp"

namespace causaldiag {

/// concat(e_target, e_candidate)
Eigen::VectorXd pair_state(const EmbeddingTable& embeddings, const NodeId& target,
                           const NodeId& candidate);

// ---------------------------------------------------------------------------
// Reward model

/// MLP forward on concat(target, candidate).
double reward_score(const Mlp& model, const Eigen::VectorXd& target,
                    const Eigen::VectorXd& candidate);

/// Sum of reward_score(target, j) over `neighbors`; 0 when empty.
double reward_high(const Mlp& model, const NodeId& target,
                   const std::vector<NodeId>& neighbors, const EmbeddingTable& embeddings);

/// Mean over triplets of -log sigmoid(r(t, preferred) - r(t, rejected)).
double bradley_terry_loss(const Mlp& model, const std::vector<FeedbackTriplet>& triplets,
                          const EmbeddingTable& embeddings, MlpGrad* grad = nullptr);

struct RewardTrainConfig {
  std::size_t hidden = 32;
  std::size_t epochs = 300;
  double lr = 0.05;
  std::uint64_t seed = 0;
};

/// Fresh seeded initialization, then full-batch gradient descent on the
/// Bradley-Terry loss over every triplet.
Mlp train_reward_model(const std::vector<FeedbackTriplet>& triplets,
                       const EmbeddingTable& embeddings, const RewardTrainConfig& config);

// ---------------------------------------------------------------------------
// Low-level policy (DDPG)

struct ReplaySample {
  Eigen::VectorXd state;
  double action = 0.0;
  double reward = 0.0;
};

/// Fixed-capacity ring of replay samples.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1024);

  void push(ReplaySample sample);
  void clear();
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const ReplaySample& operator[](std::size_t i) const { return items_.at(i); }

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<ReplaySample> items_;
};

struct LowPolicyParams {
  Mlp actor;   // 2d -> hidden -> 1, sigmoid applied on top
  Mlp critic;  // 2d + 1 -> hidden -> 1
  ReplayBuffer replay{1024};
  double exploration_std = 0.1;
  double actor_lr = 0.05;
  double critic_lr = 0.05;

  /// The actor's output layer starts at zero, so every probability is 0.5.
  static LowPolicyParams init(std::size_t embedding_dim, std::size_t hidden,
                              std::uint64_t seed, std::size_t replay_capacity = 1024);
};

double low_policy_probability(const LowPolicyParams& policy, const Eigen::VectorXd& target,
                              const Eigen::VectorXd& candidate);

/// Mean of 0.5 (Q(s, a) - r)^2 over the batch.
double critic_loss(const Mlp& critic, const std::vector<ReplaySample>& batch,
                   MlpGrad* grad = nullptr);

/// Mean of -Q(s, actor(s)) over the batch; the gradient is w.r.t. the actor.
double actor_loss(const Mlp& actor, const Mlp& critic,
                  const std::vector<ReplaySample>& batch, MlpGrad* grad = nullptr);

/// One critic regression step followed by one actor ascent step on dQ/da.
void ddpg_update(LowPolicyParams& policy, const std::vector<ReplaySample>& batch);

/// Critic regression step only.
void critic_update(LowPolicyParams& policy, const std::vector<ReplaySample>& batch);

// ---------------------------------------------------------------------------
// High-level policy (tabular Q-learning)

enum class HighAction { select, skip };

struct HighPolicyState {
  struct Values {
    double select = 0.0;
    double skip = 0.0;
  };
  std::map<NodeId, Values> q;
  double epsilon = 0.2;
  double alpha = 0.1;
  double gamma = 0.0;
};

/// epsilon-greedy over q_select - q_skip; ties break lexicographically.
NodeId select_target_node(const HighPolicyState& state, const std::vector<NodeId>& candidates,
                          std::mt19937_64& rng);

void q_update(HighPolicyState& state, const NodeId& node, HighAction action, double reward);

// ---------------------------------------------------------------------------
// Queries

/// 1 - 2 |p - 0.5|
double query_uncertainty(double probability);

/// Candidates are the target's predecessors in `graph`. Picks the two most
/// uncertain candidates whose pair is not rejected by `already_asked`.
/// Throws invalid_argument("insufficient candidates") with fewer than two
/// predecessors and conflict when every pair was already asked.
QueryTriplet generate_query(
    const LowPolicyParams& policy, const CausalGraph& graph, const NodeId& target,
    const EmbeddingTable& embeddings, const std::string& query_id,
    const std::function<bool(const NodeId&, const NodeId&)>& already_asked = {});

/// Simulated expert: prefers the candidate with a true edge into the target,
/// otherwise the lexicographically first; flips with probability `noise`.
Choice oracle_answer(const QueryTriplet& query, const CausalGraph& ground_truth, double noise,
                     std::mt19937_64& rng);

/// Edges c -> t with low_policy_probability(t, c) > tau_policy. When
/// `candidates` is given only its edges are scored; otherwise every ordered
/// pair of embedded nodes is.
CausalGraph decode_feedback_adjusted(const LowPolicyParams& policy,
                                     const EmbeddingTable& embeddings, double tau_policy,
                                     const CausalGraph* candidates = nullptr);

// ---------------------------------------------------------------------------
// Session

struct FeedbackConfig {
  std::size_t targets_per_round = 5;
  RewardTrainConfig reward;
  std::size_t policy_hidden = 32;
  std::size_t replay_capacity = 1024;
  std::size_t replay_copies = 4;  // noisy samples per candidate edge per retrain
  std::size_t critic_warmup = 300;  // critic-only steps before the DDPG updates
  std::size_t ddpg_updates = 1000;
  std::size_t ddpg_batch = 32;
  double actor_lr = 0.1;
  double critic_lr = 0.1;
  double exploration_std = 0.1;
  double epsilon = 0.2;
  double q_alpha = 0.1;
  double tau_policy = 0.5;
  std::uint64_t seed = 0;
};

/// The feedback loop over one set of frozen embeddings and a raw candidate
/// graph: picks targets, issues queries into the store, retrains on the
/// threshold and decodes the feedback-adjusted graph. When the store has a
/// directory the trained state is written to policy.json next to it and
/// reloaded on construction.
class FeedbackSession {
 public:
  FeedbackSession(EmbeddingTable embeddings, CausalGraph raw, FeedbackStore& store,
                  FeedbackConfig config);

  /// Issues up to targets_per_round new queries; returns them (possibly none).
  std::vector<QueryTriplet> generate_round();

  /// Records an answer and retrains when the store reports the threshold.
  SubmitResult answer(const std::string& query_id, Choice choice, FeedbackSource source);

  /// Reward model on the full history, replay refill, DDPG updates, Q refresh.
  void retrain();

  bool trained() const;
  std::size_t retrain_count() const;

  /// Feedback-adjusted graph over the raw candidates; the raw graph relabeled
  /// when no retrain happened yet.
  CausalGraph decode() const;

  const EmbeddingTable& embeddings() const { return embeddings_; }
  const CausalGraph& raw() const { return raw_; }
  FeedbackStore& store() { return store_; }
  const FeedbackConfig& config() const { return config_; }

  Mlp reward_model() const;
  LowPolicyParams policy() const;
  HighPolicyState high_policy() const;

  nlohmann::json state_json() const;

 private:
  void retrain_locked();
  void save_locked() const;

  mutable std::mutex mu_;
  EmbeddingTable embeddings_;
  CausalGraph raw_;
  FeedbackStore& store_;
  FeedbackConfig config_;
  Mlp reward_;
  LowPolicyParams policy_;
  HighPolicyState high_;
  std::size_t retrains_ = 0;
};

}  // namespace causaldiag
