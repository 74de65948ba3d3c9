#include <gtest/gtest.h>

#include <random>

#include "causaldiag/encoder.hpp"
#include "causaldiag/error.hpp"
#include "causaldiag/nn.hpp"
#include "causaldiag/telemetry_sim.hpp"

using namespace causaldiag;

namespace {

NodeFeatures random_features(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  NodeFeatures f;
  f.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    f.nodes.push_back("n" + std::to_string(i));
    for (std::size_t k = 0; k < dim; ++k) {
      f.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = normal(rng);
    }
  }
  return f;
}

Skeleton ring(std::size_t n) {
  Skeleton s;
  for (std::size_t i = 0; i < n; ++i) {
    s.nodes.push_back("n" + std::to_string(i));
    s.add("n" + std::to_string(i), "n" + std::to_string((i + 1) % n));
  }
  return s;
}

}  // namespace

TEST(Features, StandardizedColumns) {
  auto sc = default_avp_spec(4);
  sc.fault.onset = 450;
  auto batch = generate_metrics(sc.spec, sc.fault, 500);
  auto f = compute_features(batch);
  ASSERT_EQ(f.values.rows(), 14);
  ASSERT_EQ(f.values.cols(), static_cast<Eigen::Index>(kFeatureDim));
  for (Eigen::Index c = 0; c < f.values.cols(); ++c) {
    EXPECT_NEAR(f.values.col(c).mean(), 0.0, 1e-9);
  }
}

TEST(Features, HandComputedStatistics) {
  // The second series is the first shifted by +1: only the level features
  // differ, and two values standardize (sample std) to -+1/sqrt(2).
  MetricBatch b;
  b.node_ids = {"a", "b"};
  b.values.resize(2, 4);
  b.values << 1, 2, 3, 4, 2, 3, 4, 5;
  b.timestamps = {0, 1, 2, 3};
  auto f = compute_features(b);
  EXPECT_NEAR(f.values(0, 0), -std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(f.values(1, 0), std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(f.values(1, 3), std::sqrt(0.5), 1e-12);
  EXPECT_EQ(f.values(0, 1), 0.0);
  EXPECT_EQ(f.values(0, 2), 0.0);
  EXPECT_EQ(f.values(0, 5), 0.0);
}

TEST(Forward, UnitNormRows) {
  std::mt19937_64 rng(3);
  auto f = random_features(6, kFeatureDim, rng);
  for (auto v : {EncoderVariant::gcn, EncoderVariant::gat}) {
    auto p = init_encoder(v, kFeatureDim, 8, 4, 0.5, 11);
    auto emb = forward(p, f, ring(6));
    for (Eigen::Index i = 0; i < emb.matrix().rows(); ++i) {
      EXPECT_NEAR(emb.matrix().row(i).norm(), 1.0, 1e-6);
    }
  }
}

TEST(Forward, IsolatedTwinsGetIdenticalEmbeddings) {
  NodeFeatures f;
  f.nodes = {"a", "b"};
  f.values = Eigen::MatrixXd::Ones(2, 3);
  Skeleton empty;
  empty.nodes = f.nodes;
  auto p = init_encoder(EncoderVariant::gcn, 3, 3, 3, 0.5, 5);
  auto emb = forward(p, f, empty);
  EXPECT_TRUE(emb.at("a").isApprox(emb.at("b"), 1e-12));
}

TEST(Forward, HandComputedGcn) {
  // a - b linked, c isolated; one input feature, hidden 2, output 2.
  NodeFeatures f;
  f.nodes = {"a", "b", "c"};
  f.values.resize(3, 1);
  f.values << 1, 3, -2;
  Skeleton s;
  s.nodes = f.nodes;
  s.add("a", "b");
  EncoderParams p;
  p.w1.resize(1, 2);
  p.w1 << 1, -1;
  p.w2.resize(2, 2);
  p.w2 << 1, 0, 0.5, 2;
  auto emb = forward(p, f, s);
  // A_hat X = [2, 2, -2]; relu(. W1) = [[2,0],[2,0],[0,2]]; A_hat . = same;
  // . W2 = [[2,0],[2,0],[1,4]].
  EXPECT_NEAR(emb.at("a")(0), 1.0, 1e-9);
  EXPECT_NEAR(emb.at("a")(1), 0.0, 1e-9);
  EXPECT_NEAR(emb.at("c")(0), 1.0 / std::sqrt(17.0), 1e-9);
  EXPECT_NEAR(emb.at("c")(1), 4.0 / std::sqrt(17.0), 1e-9);
}

TEST(TripletHinge, Arithmetic) {
  EXPECT_DOUBLE_EQ(triplet_hinge(0.0, 1.0, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(triplet_hinge(0.5, 0.5, 0.5), 0.5);
  Eigen::Vector2d u(1, 0), v(0, 1);
  EXPECT_DOUBLE_EQ(cosine_distance(u, u), 0.0);
  EXPECT_DOUBLE_EQ(cosine_distance(u, v), 1.0);
  EXPECT_DOUBLE_EQ(cosine_distance(u, -u), 2.0);
}

TEST(TripletLoss, InactiveHingeHasZeroGradient) {
  std::mt19937_64 rng(9);
  auto f = random_features(5, kFeatureDim, rng);
  auto p = init_encoder(EncoderVariant::gcn, kFeatureDim, 8, 4, 0.0, 2);
  auto emb = forward(p, f, ring(5));
  // Order the pair so that d(a,p) < d(a,n); with margin 0 the hinge is off.
  Triplet t{"n0", "n1", "n2"};
  double dap = cosine_distance(emb.at("n0"), emb.at("n1"));
  double dan = cosine_distance(emb.at("n0"), emb.at("n2"));
  if (dap >= dan) std::swap(t.positive, t.negative);
  std::vector<double> grad;
  double loss = triplet_loss(p, f, ring(5), {t}, &grad);
  EXPECT_EQ(loss, 0.0);
  for (double g : grad) EXPECT_EQ(g, 0.0);
}

TEST(TripletLoss, GradientMatchesFiniteDifferences) {
  for (auto variant : {EncoderVariant::gcn, EncoderVariant::gat}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      std::mt19937_64 rng(seed);
      auto f = random_features(6, kFeatureDim, rng);
      auto p = init_encoder(variant, kFeatureDim, 5, 3, 1.5, seed + 40);
      EXPECT_LT(gradient_check(p, f, ring(6), {"n0", "n1", "n3"}), 1e-4)
          << to_string(variant) << " seed " << seed;
    }
  }
}

TEST(TripletLoss, UnknownNodeRejected) {
  std::mt19937_64 rng(1);
  auto f = random_features(4, kFeatureDim, rng);
  auto p = init_encoder(EncoderVariant::gcn, kFeatureDim, 4, 3, 0.5, 1);
  EXPECT_THROW(triplet_loss(p, f, ring(4), {{"n0", "n1", "zz"}}), Error);
}

TEST(SampleTriplets, PositivesAdjacentNegativesNot) {
  std::mt19937_64 rng(5);
  auto s = ring(7);
  auto triplets = sample_triplets(s, s.nodes, rng);
  EXPECT_EQ(triplets.size(), 14u);
  for (const auto& t : triplets) {
    EXPECT_TRUE(s.adjacent(t.anchor, t.positive));
    EXPECT_FALSE(s.adjacent(t.anchor, t.negative));
    EXPECT_NE(t.anchor, t.negative);
  }
}

TEST(TrainContrastive, LossDecreasesAndIsSeeded) {
  std::mt19937_64 rng(21);
  auto f = random_features(8, kFeatureDim, rng);
  EncoderTrainConfig cfg;
  cfg.epochs = 200;
  cfg.seed = 3;
  auto a = train_contrastive(f, ring(8), cfg);
  auto b = train_contrastive(f, ring(8), cfg);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.loss_history.size(), 200u);
  double head = 0, tail = 0;
  for (int k = 0; k < 20; ++k) {
    head += a.loss_history[static_cast<std::size_t>(k)];
    tail += a.loss_history[a.loss_history.size() - 1 - static_cast<std::size_t>(k)];
  }
  EXPECT_LT(tail, head);
}

TEST(TrainContrastive, EmptySkeletonRejected) {
  std::mt19937_64 rng(2);
  auto f = random_features(4, kFeatureDim, rng);
  Skeleton s;
  s.nodes = f.nodes;
  EXPECT_THROW(train_contrastive(f, s, {}), Error);
}

TEST(EncoderParams, JsonAndParameterRoundTrip) {
  for (auto v : {EncoderVariant::gcn, EncoderVariant::gat}) {
    auto p = init_encoder(v, kFeatureDim, 7, 5, 0.5, 8);
    EXPECT_EQ(encoder_from_json(to_json(p)), p);
    auto q = p;
    q.set_parameters(p.parameters());
    EXPECT_EQ(q, p);
    EXPECT_THROW(q.set_parameters({1.0, 2.0}), Error);
  }
  EXPECT_EQ(encoder_variant_from_string("gat"), EncoderVariant::gat);
  EXPECT_THROW(encoder_variant_from_string("mlp"), Error);
}

TEST(EmbeddingTable, LookupErrors) {
  EmbeddingTable t({"a"}, Eigen::MatrixXd::Ones(1, 2));
  EXPECT_TRUE(t.contains("a"));
  EXPECT_THROW(t.at("b"), Error);
}
