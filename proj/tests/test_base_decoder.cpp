#include <gtest/gtest.h>

#include "causaldiag/base_decoder.hpp"
#include "causaldiag/error.hpp"

using namespace causaldiag;

namespace {

EmbeddingTable table(std::vector<NodeId> nodes, std::vector<std::vector<double>> rows) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < rows[i].size(); ++k) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
  }
  return EmbeddingTable(std::move(nodes), m);
}

}  // namespace

TEST(BaseEdgeProbability, AnalyticSigmoid) {
  Eigen::Vector2d e(1, 0), o(0, 1);
  EXPECT_NEAR(base_edge_probability(e, e), 0.7310585786300049, 1e-12);
  EXPECT_DOUBLE_EQ(base_edge_probability(e, o), 0.5);
  EXPECT_NEAR(base_edge_probability(e, -e), 0.2689414213699951, 1e-12);
}

TEST(DecodeRaw, IdenticalPairEntersBothDirections) {
  auto emb = table({"A", "B"}, {{1, 0}, {1, 0}});
  BasePolicyConfig cfg{0.6};
  auto g = decode_raw(emb, cfg);
  EXPECT_EQ(g.stage(), Stage::raw);
  ASSERT_EQ(g.edge_count(), 2u);
  EXPECT_NEAR(g.find_edge("A", "B")->confidence, 0.7311, 1e-4);
  EXPECT_NEAR(g.find_edge("B", "A")->confidence, 0.7311, 1e-4);
  EXPECT_EQ(g.find_edge("A", "B")->provenance, Provenance::base);
}

TEST(DecodeRaw, OrthogonalPairHasNoEdge) {
  auto emb = table({"A", "B"}, {{1, 0}, {0, 1}});
  auto g = decode_raw(emb, BasePolicyConfig{0.6});
  EXPECT_EQ(g.edge_count(), 0u);
  EXPECT_EQ(g.node_count(), 2u);
}

TEST(DecodeRaw, Preconditions) {
  EXPECT_THROW(decode_raw(table({"A"}, {{1, 0}}), {}), Error);
  EXPECT_THROW(BasePolicyConfig{1.0}.validate(), Error);
}

TEST(CalibrateTauBase, KeepsEveryTruthEdge) {
  double s = std::sqrt(0.5);
  auto emb = table({"A", "B", "C"}, {{1, 0}, {s, s}, {0, 1}});
  CausalGraph truth;
  truth.add_edge({"A", "B", 1.0, Provenance::base});
  truth.add_edge({"A", "C", 1.0, Provenance::base});
  double tau = calibrate_tau_base(emb, truth, 0.005);
  auto g = decode_raw(emb, BasePolicyConfig{tau});
  EXPECT_TRUE(g.has_edge("A", "B"));
  EXPECT_TRUE(g.has_edge("A", "C"));
  // One resolution step higher loses A-C (probability exactly 0.5).
  EXPECT_LT(tau, 0.5);
  EXPECT_GE(tau + 0.005, 0.5);
  CausalGraph foreign;
  foreign.add_edge({"X", "Y", 1.0, Provenance::base});
  EXPECT_THROW(calibrate_tau_base(emb, foreign), Error);
}
