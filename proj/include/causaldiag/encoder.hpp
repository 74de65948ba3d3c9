#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "causaldiag/graph.hpp"
#include "causaldiag/ingest.hpp"
#include "causaldiag/pc.hpp"

namespace causaldiag {

inline constexpr std::size_t kFeatureDim = 6;

/// Per-node summary statistics [mean, std, lag-1 autocorrelation, min, max,
/// least-squares slope], standardized per column across nodes.
struct NodeFeatures {
  std::vector<NodeId> nodes;
  Eigen::MatrixXd values;  // node x kFeatureDim
};

NodeFeatures compute_features(const MetricBatch& batch);

enum class EncoderVariant { gcn, gat };

std::string_view to_string(EncoderVariant v);
EncoderVariant encoder_variant_from_string(std::string_view s);

struct EncoderParams {
  EncoderVariant variant = EncoderVariant::gcn;
  Eigen::MatrixXd w1;  // input x hidden
  Eigen::MatrixXd w2;  // hidden x dim
  // Attention vectors, GAT only (empty for GCN).
  Eigen::VectorXd att1_src, att1_dst;  // hidden
  Eigen::VectorXd att2_src, att2_dst;  // dim
  double margin = 0.5;

  std::size_t input_dim() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t embedding_dim() const { return static_cast<std::size_t>(w2.cols()); }

  std::vector<double> parameters() const;
  void set_parameters(const std::vector<double>& values);

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

EncoderParams init_encoder(EncoderVariant variant, std::size_t input,
                           std::size_t hidden, std::size_t dim, double margin,
                           std::uint64_t seed);

nlohmann::json to_json(const EncoderParams& params);
EncoderParams encoder_from_json(const nlohmann::json& j);

/// Unit-norm node embeddings, one row per node.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<NodeId> nodes, Eigen::MatrixXd rows);

  const std::vector<NodeId>& nodes() const noexcept { return nodes_; }
  const Eigen::MatrixXd& matrix() const noexcept { return rows_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(rows_.cols()); }
  bool contains(const NodeId& node) const { return index_.count(node) != 0; }
  /// Throws not_found for unknown nodes.
  Eigen::VectorXd at(const NodeId& node) const;

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.nodes_ == b.nodes_ && a.rows_ == b.rows_;
  }

 private:
  std::vector<NodeId> nodes_;
  Eigen::MatrixXd rows_;
  std::map<NodeId, std::size_t> index_;
};

/// GCN: Z = A_hat relu(A_hat X W1) W2 with A_hat = D^-1/2 (A + I) D^-1/2.
/// GAT: two single-head attention layers (LeakyReLU 0.2 scores, softmax over
/// N(i) and i), ReLU between them. Rows are L2-normalized in both cases.
EmbeddingTable forward(const EncoderParams& params, const NodeFeatures& features,
                       const Skeleton& adjacency);

struct Triplet {
  NodeId anchor;
  NodeId positive;
  NodeId negative;
};

/// 1 - cos(u, v)
double cosine_distance(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

/// max(0, margin + d_ap - d_an)
double triplet_hinge(double d_ap, double d_an, double margin);

/// Sum of triplet hinge losses over `triplets`; fills `grad` (same layout as
/// EncoderParams::parameters()) when non-null.
double triplet_loss(const EncoderParams& params, const NodeFeatures& features,
                    const Skeleton& adjacency, const std::vector<Triplet>& triplets,
                    std::vector<double>* grad = nullptr);

/// One triplet per (anchor, positive) ordered skeleton pair with a uniformly
/// drawn non-adjacent negative.
std::vector<Triplet> sample_triplets(const Skeleton& adjacency,
                                     const std::vector<NodeId>& nodes,
                                     std::mt19937_64& rng);

struct EncoderTrainConfig {
  EncoderVariant variant = EncoderVariant::gcn;
  std::size_t hidden = 32;
  std::size_t dim = 16;
  double margin = 0.5;
  std::size_t epochs = 500;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

struct EncoderTrainResult {
  EncoderParams params;
  std::vector<double> loss_history;  // per epoch, before the update
};

/// Full-batch gradient descent on the triplet loss; fresh triplets each epoch.
EncoderTrainResult train_contrastive(const NodeFeatures& features,
                                     const Skeleton& adjacency,
                                     const EncoderTrainConfig& config);

/// Largest relative error between analytic and central-difference gradients
/// of the loss of a single triplet.
double gradient_check(const EncoderParams& params, const NodeFeatures& features,
                      const Skeleton& adjacency, const Triplet& triplet,
                      double step = 1e-5);

}  // namespace causaldiag
