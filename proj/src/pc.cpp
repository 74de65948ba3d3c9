#include "causaldiag/pc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <boost/math/distributions/normal.hpp>

#include "causaldiag/error.hpp"

namespace causaldiag {

bool Skeleton::adjacent(const NodeId& a, const NodeId& b) const {
  return adjacency.count(a < b ? std::make_pair(a, b) : std::make_pair(b, a)) != 0;
}

void Skeleton::add(const NodeId& a, const NodeId& b) {
  if (a == b) throw Error(ErrorKind::invalid_argument, "skeleton self-pair " + a);
  adjacency.insert(a < b ? std::make_pair(a, b) : std::make_pair(b, a));
}

std::vector<NodeId> Skeleton::neighbors(const NodeId& node) const {
  std::vector<NodeId> out;
  for (const auto& [a, b] : adjacency) {
    if (a == node) out.push_back(b);
    if (b == node) out.push_back(a);
  }
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json to_json(const Skeleton& skeleton) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [a, b] : skeleton.adjacency) pairs.push_back({a, b});
  return {{"nodes", skeleton.nodes},
          {"alpha", skeleton.alpha},
          {"max_cond", skeleton.max_cond},
          {"pairs", pairs}};
}

Skeleton skeleton_from_json(const nlohmann::json& j) {
  try {
    Skeleton s;
    s.nodes = j.at("nodes").get<std::vector<NodeId>>();
    s.alpha = j.value("alpha", 0.05);
    s.max_cond = j.value("max_cond", std::size_t{3});
    for (const auto& p : j.at("pairs")) {
      s.add(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    }
    return s;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::parse, std::string("invalid skeleton JSON: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------

FisherZTest::FisherZTest(const MetricBatch& batch) {
  const auto n = batch.values.rows();
  const auto t = batch.values.cols();
  samples_ = static_cast<std::size_t>(t);
  if (t < 2) throw Error(ErrorKind::degenerate, "need at least two samples");
  Eigen::MatrixXd centered = batch.values.colwise() - batch.values.rowwise().mean();
  Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(t - 1);
  Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(sd(i) > 0.0)) {
      throw Error(ErrorKind::degenerate,
                  "constant series '" + batch.node_ids[static_cast<std::size_t>(i)] + "'");
    }
  }
  corr_ = cov.array() / (sd * sd.transpose()).array();
  corr_.diagonal().setOnes();
}

double FisherZTest::partial_correlation(std::size_t i, std::size_t j,
                                        const std::vector<std::size_t>& cond) const {
  if (cond.empty()) {
    return std::clamp(corr_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)),
                      -1.0, 1.0);
  }
  std::vector<std::size_t> idx{i, j};
  idx.insert(idx.end(), cond.begin(), cond.end());
  const auto k = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd sub(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) {
      sub(a, b) = corr_(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(a)]),
                        static_cast<Eigen::Index>(idx[static_cast<std::size_t>(b)]));
    }
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(sub);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) {
    throw Error(ErrorKind::degenerate, "degenerate data: singular correlation matrix");
  }
  Eigen::MatrixXd prec = lu.inverse();
  double rho = -prec(0, 1) / std::sqrt(prec(0, 0) * prec(1, 1));
  return std::clamp(rho, -1.0, 1.0);
}

double FisherZTest::statistic(std::size_t i, std::size_t j,
                              const std::vector<std::size_t>& cond) const {
  if (samples_ <= cond.size() + 3) {
    throw Error(ErrorKind::invalid_argument,
                "too few samples for conditioning set of size " +
                    std::to_string(cond.size()));
  }
  double rho = partial_correlation(i, j, cond);
  if (std::abs(rho) >= 1.0 - 1e-15) return std::numeric_limits<double>::infinity();
  double z = 0.5 * std::log((1.0 + rho) / (1.0 - rho));
  return std::sqrt(static_cast<double>(samples_ - cond.size() - 3)) * std::abs(z);
}

bool FisherZTest::independent(std::size_t i, std::size_t j,
                              const std::vector<std::size_t>& cond,
                              double alpha) const {
  return statistic(i, j, cond) <= normal_critical_value(alpha);
}

double normal_critical_value(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "alpha must lie in (0,1)");
  }
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, 1.0 - alpha / 2.0);
}

bool fisher_z_test(const MetricBatch& batch, const NodeId& i, const NodeId& j,
                   const std::vector<NodeId>& conditioning, double alpha) {
  auto row = [&](const NodeId& n) {
    auto idx = batch.index_of(n);
    if (!idx) throw Error(ErrorKind::not_found, "node '" + n + "' not in batch");
    return *idx;
  };
  if (conditioning.size() + 2 > batch.num_nodes()) {
    throw Error(ErrorKind::invalid_argument, "conditioning set too large");
  }
  std::vector<std::size_t> cond;
  for (const auto& c : conditioning) cond.push_back(row(c));
  FisherZTest test(batch);
  return test.independent(row(i), row(j), cond, alpha);
}

namespace {

/// Calls fn on every size-k subset of `items` in lexicographic order; stops
/// early when fn returns true. Returns whether it stopped early.
template <typename Fn>
bool for_each_subset(const std::vector<std::size_t>& items, std::size_t k, Fn&& fn) {
  if (k > items.size()) return false;
  std::vector<std::size_t> pick(k);
  for (std::size_t i = 0; i < k; ++i) pick[i] = i;
  std::vector<std::size_t> subset(k);
  while (true) {
    for (std::size_t i = 0; i < k; ++i) subset[i] = items[pick[i]];
    if (fn(subset)) return true;
    // Advance to the next combination.
    std::size_t i = k;
    while (i > 0 && pick[i - 1] == items.size() - k + (i - 1)) --i;
    if (i == 0) return false;
    ++pick[i - 1];
    for (std::size_t j = i; j < k; ++j) pick[j] = pick[j - 1] + 1;
  }
}

}  // namespace

Skeleton pc_skeleton(const MetricBatch& batch, double alpha, std::size_t max_cond) {
  if (batch.num_nodes() < 3) {
    throw Error(ErrorKind::invalid_argument, "PC needs at least three nodes");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "alpha must lie in (0,1)");
  }
  FisherZTest test(batch);
  const std::size_t n = batch.num_nodes();

  // Work in lexicographic node order so results do not depend on file order.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return batch.node_ids[a] < batch.node_ids[b];
  });

  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, true));
  for (std::size_t i = 0; i < n; ++i) adj[i][i] = false;

  for (std::size_t level = 0; level <= max_cond; ++level) {
    auto frozen = adj;
    bool any_testable = false;
    std::vector<std::pair<std::size_t, std::size_t>> removals;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        const std::size_t i = order[a], j = order[b];
        if (!frozen[i][j]) continue;
        bool separated = false;
        for (auto [x, y] : {std::pair{i, j}, std::pair{j, i}}) {
          std::vector<std::size_t> candidates;
          for (std::size_t c : order) {
            if (c != y && frozen[x][c]) candidates.push_back(c);
          }
          if (candidates.size() < level) continue;
          any_testable = true;
          separated = for_each_subset(candidates, level, [&](const auto& s) {
            return test.independent(i, j, s, alpha);
          });
          if (separated) break;
        }
        if (separated) removals.emplace_back(i, j);
      }
    }
    for (auto [i, j] : removals) adj[i][j] = adj[j][i] = false;
    if (!any_testable) break;
  }

  Skeleton s;
  s.alpha = alpha;
  s.max_cond = max_cond;
  for (std::size_t a = 0; a < n; ++a) s.nodes.push_back(batch.node_ids[order[a]]);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (adj[i][j]) s.add(batch.node_ids[i], batch.node_ids[j]);
    }
  }
  return s;
}

}  // namespace causaldiag
