#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "causaldiag/error.hpp"
#include "causaldiag/graph.hpp"

using namespace causaldiag;

namespace {

CausalGraph make(std::initializer_list<std::pair<const char*, const char*>> edges,
                 Stage stage = Stage::raw) {
  CausalGraph g(stage);
  for (auto [a, b] : edges) g.add_edge({a, b, 1.0, Provenance::base});
  return g;
}

// Depth-first enumeration of simple paths, independent of the library.
bool path_exists(const std::vector<std::vector<int>>& adj, int from, int to) {
  std::vector<bool> seen(adj.size(), false);
  std::function<bool(int)> dfs = [&](int u) {
    if (u == to) return true;
    seen[static_cast<std::size_t>(u)] = true;
    for (int v : adj[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(v)] && dfs(v)) return true;
    }
    return false;
  };
  return dfs(from);
}

}  // namespace

TEST(WouldCreateCycle, SpecExamples) {
  EXPECT_TRUE(would_create_cycle(make({{"A", "B"}}), {"B", "A"}));
  EXPECT_TRUE(would_create_cycle(make({{"A", "B"}, {"B", "C"}}), {"C", "A"}));
  EXPECT_FALSE(would_create_cycle(make({{"A", "B"}, {"B", "C"}}), {"A", "C"}));
  EXPECT_TRUE(would_create_cycle(make({{"A", "B"}}), {"A", "A"}));
}

TEST(IsDag, SpecExamples) {
  EXPECT_TRUE(is_dag(CausalGraph{}));
  EXPECT_FALSE(is_dag(make({{"A", "B"}, {"B", "A"}})));
  EXPECT_TRUE(is_dag(make({{"A", "B"}, {"A", "C"}, {"B", "C"}})));
}

TEST(CausalGraph, DuplicateKeepsLargerConfidence) {
  CausalGraph g;
  g.add_edge({"A", "B", 0.4, Provenance::base});
  g.add_edge({"A", "B", 0.9, Provenance::policy});
  g.add_edge({"A", "B", 0.2, Provenance::base});
  ASSERT_EQ(g.edge_count(), 1u);
  EXPECT_DOUBLE_EQ(g.find_edge("A", "B")->confidence, 0.9);
}

TEST(CausalGraph, ContextExtendedRejectsCycles) {
  auto g = make({{"A", "B"}, {"B", "C"}}, Stage::context_extended);
  EXPECT_THROW(g.add_edge({"C", "A", 1.0, Provenance::rule}), Error);
  EXPECT_EQ(g.edge_count(), 2u);
  auto cyclic = make({{"A", "B"}, {"B", "A"}});
  EXPECT_THROW(cyclic.set_stage(Stage::context_extended), Error);
}

TEST(CausalGraph, RemoveNodeDropsIncidentEdges) {
  auto g = make({{"A", "B"}, {"B", "C"}, {"A", "C"}});
  g.remove_node("B");
  EXPECT_EQ(g.edge_count(), 1u);
  EXPECT_TRUE(g.has_edge("A", "C"));
  EXPECT_FALSE(g.has_node("B"));
}

TEST(CausalGraph, JsonRoundTrip) {
  CausalGraph g(Stage::pruned);
  g.add_edge({"a_cpu_by_pod", "b_cpu_by_pod", 0.75, Provenance::policy});
  g.add_edge({"parking_queue", "a_cpu_by_pod", 1.0, Provenance::rule});
  g.add_node("lonely");
  EXPECT_EQ(graph_from_json(to_json(g)), g);
}

TEST(EnforceDag, DropsLowestConfidenceEdgeOfCycle) {
  CausalGraph g;
  g.add_edge({"A", "B", 0.9, Provenance::base});
  g.add_edge({"B", "C", 0.8, Provenance::base});
  g.add_edge({"C", "A", 0.3, Provenance::base});
  auto dropped = enforce_dag(g);
  ASSERT_EQ(dropped.size(), 1u);
  EXPECT_EQ(dropped[0].source, "C");
  EXPECT_TRUE(is_dag(g));
  EXPECT_EQ(g.edge_count(), 2u);
}

TEST(Ancestors, Transitive) {
  auto g = make({{"A", "B"}, {"B", "C"}, {"D", "C"}, {"C", "E"}});
  EXPECT_EQ(ancestors(g, "C"), (std::set<NodeId>{"A", "B", "D"}));
  EXPECT_TRUE(ancestors(g, "A").empty());
}

TEST(Evaluate, StageShapedCounts) {
  // 19 expected edges; 16 predicted, all correct.
  CausalGraph truth, predicted;
  for (int i = 0; i < 19; ++i) {
    CausalEdge e{"n" + std::to_string(i), "m" + std::to_string(i), 1.0, Provenance::base};
    truth.add_edge(e);
    if (i < 16) predicted.add_edge(e);
  }
  auto m = evaluate(predicted, truth, EvalLevel::node);
  EXPECT_DOUBLE_EQ(m.precision, 1.0);
  EXPECT_NEAR(m.recall, 0.84, 0.005);
  EXPECT_NEAR(m.f1, 0.91, 0.005);

  // 137 predicted containing all 19.
  CausalGraph big = truth;
  for (int i = 0; i < 118; ++i) {
    big.add_edge({"x" + std::to_string(i), "y" + std::to_string(i), 1.0, Provenance::base});
  }
  auto b = evaluate(big, truth, EvalLevel::node);
  EXPECT_EQ(b.edge_count, 137u);
  EXPECT_NEAR(b.precision, 0.14, 0.005);
  EXPECT_DOUBLE_EQ(b.recall, 1.0);

  auto id = evaluate(truth, truth, EvalLevel::node);
  EXPECT_DOUBLE_EQ(id.f1, 1.0);
}

TEST(Evaluate, ServiceLevelCollapsesPairs) {
  CausalGraph truth, predicted;
  truth.add_edge({"a_cpu_by_pod", "b_cpu_by_pod", 1.0, Provenance::base});
  predicted.add_edge({"a_mem_by_pod", "b_cpu_by_pod", 1.0, Provenance::base});
  predicted.add_edge({"a_cpu_by_pod", "b_mem_by_pod", 1.0, Provenance::base});
  auto m = evaluate(predicted, truth, EvalLevel::service, {"_cpu_by_pod", "_mem_by_pod"});
  EXPECT_EQ(m.edge_count, 2u);
  EXPECT_EQ(m.predicted, 1u);
  EXPECT_DOUBLE_EQ(m.precision, 1.0);
  EXPECT_DOUBLE_EQ(evaluate(predicted, truth, EvalLevel::node).precision, 0.0);
}

TEST(Evaluate, UnresolvableServiceNamesTheNode) {
  CausalGraph truth, predicted;
  truth.add_edge({"a_cpu_by_pod", "b_cpu_by_pod", 1.0, Provenance::base});
  predicted.add_edge({"_cpu_by_pod", "b_cpu_by_pod", 1.0, Provenance::base});
  try {
    evaluate(predicted, truth, EvalLevel::service, {"_cpu_by_pod"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("_cpu_by_pod"), std::string::npos);
  }
}

TEST(WouldCreateCycleProperty, AgreesWithPathOracleOnRandomGraphs) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 5);
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    CausalGraph g;
    for (int i = 0; i < n; ++i) g.add_node("v" + std::to_string(i));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i != j && rng() % 4 == 0) {
          adj[static_cast<std::size_t>(i)].push_back(j);
          g.add_edge({"v" + std::to_string(i), "v" + std::to_string(j), 1.0, Provenance::base});
        }
      }
    }
    for (int s = 0; s < n; ++s) {
      for (int t = 0; t < n; ++t) {
        bool expected = s == t || path_exists(adj, t, s);
        EXPECT_EQ(would_create_cycle(g, {"v" + std::to_string(s), "v" + std::to_string(t)}),
                  expected);
      }
    }
  }
}
