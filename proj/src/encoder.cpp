#include "causaldiag/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "causaldiag/error.hpp"
#include "causaldiag/nn.hpp"

namespace causaldiag {

// ---------------------------------------------------------------------------
// Features

NodeFeatures compute_features(const MetricBatch& batch) {
  const auto n = static_cast<Eigen::Index>(batch.num_nodes());
  const auto t = static_cast<Eigen::Index>(batch.num_samples());
  if (t < 3) throw Error(ErrorKind::invalid_argument, "need at least 3 samples");

  Eigen::MatrixXd raw(n, static_cast<Eigen::Index>(kFeatureDim));
  Eigen::VectorXd time = Eigen::VectorXd::LinSpaced(t, 0.0, static_cast<double>(t - 1));
  const double time_mean = time.mean();
  const double time_ss = (time.array() - time_mean).square().sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd x = batch.values.row(i).transpose();
    const double mean = x.mean();
    Eigen::VectorXd c = x.array() - mean;
    const double ss = c.squaredNorm();
    const double sd = std::sqrt(ss / static_cast<double>(t - 1));
    double ac = 0.0;
    if (ss > 0.0) ac = c.head(t - 1).dot(c.tail(t - 1)) / ss;
    const double slope = (time.array() - time_mean).matrix().dot(c) / time_ss;
    raw.row(i) << mean, sd, ac, x.minCoeff(), x.maxCoeff(), slope;
  }

  NodeFeatures f;
  f.nodes = batch.node_ids;
  f.values.resize(n, static_cast<Eigen::Index>(kFeatureDim));
  for (Eigen::Index k = 0; k < raw.cols(); ++k) {
    const double mean = raw.col(k).mean();
    const double sd = n > 1 ? std::sqrt((raw.col(k).array() - mean).square().sum() /
                                        static_cast<double>(n - 1))
                            : 0.0;
    if (sd > 0.0) {
      f.values.col(k) = (raw.col(k).array() - mean) / sd;
    } else {
      f.values.col(k).setZero();
    }
  }
  return f;
}

std::string_view to_string(EncoderVariant v) {
  return v == EncoderVariant::gcn ? "gcn" : "gat";
}

EncoderVariant encoder_variant_from_string(std::string_view s) {
  if (s == "gcn") return EncoderVariant::gcn;
  if (s == "gat") return EncoderVariant::gat;
  throw Error(ErrorKind::invalid_argument, "unknown encoder variant '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

void append(std::vector<double>& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  }
}

void append(std::vector<double>& out, const Eigen::VectorXd& v) {
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(v(k));
}

void consume(const std::vector<double>& in, std::size_t& pos, Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in.at(pos++);
  }
}

void consume(const std::vector<double>& in, std::size_t& pos, Eigen::VectorXd& v) {
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = in.at(pos++);
}

Eigen::MatrixXd glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = u(rng);
  }
  return m;
}

}  // namespace

std::vector<double> EncoderParams::parameters() const {
  std::vector<double> out;
  append(out, w1);
  append(out, w2);
  if (variant == EncoderVariant::gat) {
    append(out, att1_src);
    append(out, att1_dst);
    append(out, att2_src);
    append(out, att2_dst);
  }
  return out;
}

void EncoderParams::set_parameters(const std::vector<double>& values) {
  if (values.size() != parameters().size()) {
    throw Error(ErrorKind::invalid_argument, "encoder parameter count mismatch");
  }
  std::size_t pos = 0;
  consume(values, pos, w1);
  consume(values, pos, w2);
  if (variant == EncoderVariant::gat) {
    consume(values, pos, att1_src);
    consume(values, pos, att1_dst);
    consume(values, pos, att2_src);
    consume(values, pos, att2_dst);
  }
}

EncoderParams init_encoder(EncoderVariant variant, std::size_t input,
                           std::size_t hidden, std::size_t dim, double margin,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  EncoderParams p;
  p.variant = variant;
  p.margin = margin;
  const auto in = static_cast<Eigen::Index>(input);
  const auto h = static_cast<Eigen::Index>(hidden);
  const auto d = static_cast<Eigen::Index>(dim);
  p.w1 = glorot(in, h, rng);
  p.w2 = glorot(h, d, rng);
  if (variant == EncoderVariant::gat) {
    p.att1_src = glorot(h, 1, rng).col(0);
    p.att1_dst = glorot(h, 1, rng).col(0);
    p.att2_src = glorot(d, 1, rng).col(0);
    p.att2_dst = glorot(d, 1, rng).col(0);
  }
  return p;
}

nlohmann::json to_json(const EncoderParams& p) {
  nlohmann::json j{{"variant", std::string(to_string(p.variant))},
                   {"margin", p.margin},
                   {"w1", matrix_to_json(p.w1)},
                   {"w2", matrix_to_json(p.w2)}};
  if (p.variant == EncoderVariant::gat) {
    j["att1_src"] = vector_to_json(p.att1_src);
    j["att1_dst"] = vector_to_json(p.att1_dst);
    j["att2_src"] = vector_to_json(p.att2_src);
    j["att2_dst"] = vector_to_json(p.att2_dst);
  }
  return j;
}

EncoderParams encoder_from_json(const nlohmann::json& j) {
  try {
    EncoderParams p;
    p.variant = encoder_variant_from_string(j.at("variant").get<std::string>());
    p.margin = j.at("margin").get<double>();
    p.w1 = matrix_from_json(j.at("w1"));
    p.w2 = matrix_from_json(j.at("w2"));
    if (p.w1.cols() != p.w2.rows()) {
      throw Error(ErrorKind::parse, "encoder layer dimensions disagree");
    }
    if (p.variant == EncoderVariant::gat) {
      p.att1_src = vector_from_json(j.at("att1_src"));
      p.att1_dst = vector_from_json(j.at("att1_dst"));
      p.att2_src = vector_from_json(j.at("att2_src"));
      p.att2_dst = vector_from_json(j.at("att2_dst"));
      if (p.att1_src.size() != p.w1.cols() || p.att1_dst.size() != p.w1.cols() ||
          p.att2_src.size() != p.w2.cols() || p.att2_dst.size() != p.w2.cols()) {
        throw Error(ErrorKind::parse, "attention vector dimensions disagree");
      }
    }
    if (!p.w1.allFinite() || !p.w2.allFinite()) {
      throw Error(ErrorKind::parse, "encoder weights must be finite");
    }
    return p;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::parse, std::string("invalid encoder JSON: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------
// EmbeddingTable

EmbeddingTable::EmbeddingTable(std::vector<NodeId> nodes, Eigen::MatrixXd rows)
    : nodes_(std::move(nodes)), rows_(std::move(rows)) {
  if (static_cast<Eigen::Index>(nodes_.size()) != rows_.rows()) {
    throw Error(ErrorKind::invalid_argument, "embedding table size mismatch");
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) index_[nodes_[i]] = i;
}

Eigen::VectorXd EmbeddingTable::at(const NodeId& node) const {
  auto it = index_.find(node);
  if (it == index_.end()) {
    throw Error(ErrorKind::not_found, "no embedding for node '" + node + "'");
  }
  return rows_.row(static_cast<Eigen::Index>(it->second)).transpose();
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

constexpr double kLeakySlope = 0.2;

struct GraphOps {
  Eigen::MatrixXd a_hat;  // GCN propagation matrix
  Eigen::MatrixXd mask;   // 1 where j in N(i) or j == i
};

GraphOps build_graph(const NodeFeatures& features, const Skeleton& adjacency) {
  std::map<NodeId, Eigen::Index> idx;
  for (std::size_t i = 0; i < features.nodes.size(); ++i) {
    idx[features.nodes[i]] = static_cast<Eigen::Index>(i);
  }
  const auto n = static_cast<Eigen::Index>(features.nodes.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  for (const auto& [u, v] : adjacency.adjacency) {
    auto iu = idx.find(u), iv = idx.find(v);
    if (iu == idx.end() || iv == idx.end()) {
      throw Error(ErrorKind::invalid_argument,
                  "adjacency node not among features: " +
                      (iu == idx.end() ? u : v));
    }
    a(iu->second, iv->second) = 1.0;
    a(iv->second, iu->second) = 1.0;
  }
  GraphOps ops;
  ops.mask = a;
  Eigen::VectorXd inv_sqrt = a.rowwise().sum().cwiseSqrt().cwiseInverse();
  ops.a_hat = inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
  return ops;
}

struct GatCache {
  Eigen::MatrixXd input;
  Eigen::MatrixXd g;
  Eigen::MatrixXd pre;    // s_i + t_j
  Eigen::MatrixXd alpha;  // attention weights, zero outside the mask
};

Eigen::MatrixXd gat_forward(const Eigen::MatrixXd& input, const Eigen::MatrixXd& w,
                            const Eigen::VectorXd& a_src, const Eigen::VectorXd& a_dst,
                            const Eigen::MatrixXd& mask, GatCache& c) {
  const auto n = input.rows();
  c.input = input;
  c.g = input * w;
  Eigen::VectorXd s = c.g * a_src;
  Eigen::VectorXd t = c.g * a_dst;
  c.pre = Eigen::MatrixXd::Zero(n, n);
  c.alpha = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (mask(i, j) == 0.0) continue;
      double p = s(i) + t(j);
      c.pre(i, j) = p;
      double e = p > 0.0 ? p : kLeakySlope * p;
      c.alpha(i, j) = e;
      best = std::max(best, e);
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (mask(i, j) == 0.0) continue;
      c.alpha(i, j) = std::exp(c.alpha(i, j) - best);
      total += c.alpha(i, j);
    }
    c.alpha.row(i) /= total;
  }
  return c.alpha * c.g;
}

struct GatGrad {
  Eigen::MatrixXd w;
  Eigen::VectorXd a_src, a_dst;
  Eigen::MatrixXd input;
};

GatGrad gat_backward(const GatCache& c, const Eigen::MatrixXd& w,
                     const Eigen::VectorXd& a_src, const Eigen::VectorXd& a_dst,
                     const Eigen::MatrixXd& mask, const Eigen::MatrixXd& dout) {
  const auto n = c.g.rows();
  Eigen::MatrixXd dg = c.alpha.transpose() * dout;
  Eigen::MatrixXd dalpha = dout * c.g.transpose();
  Eigen::MatrixXd dpre = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double r = c.alpha.row(i).dot(dalpha.row(i));
    for (Eigen::Index j = 0; j < n; ++j) {
      if (mask(i, j) == 0.0) continue;
      double de = c.alpha(i, j) * (dalpha(i, j) - r);
      dpre(i, j) = de * (c.pre(i, j) > 0.0 ? 1.0 : kLeakySlope);
    }
  }
  Eigen::VectorXd ds = dpre.rowwise().sum();
  Eigen::VectorXd dt = dpre.colwise().sum().transpose();
  GatGrad grad;
  grad.a_src = c.g.transpose() * ds;
  grad.a_dst = c.g.transpose() * dt;
  dg += ds * a_src.transpose() + dt * a_dst.transpose();
  grad.w = c.input.transpose() * dg;
  grad.input = dg * w.transpose();
  return grad;
}

struct ForwardCache {
  Eigen::MatrixXd ax, p1, h1, ah, zr, z;
  Eigen::VectorXd norms;
  GatCache l1, l2;
};

Eigen::MatrixXd run_forward(const EncoderParams& p, const GraphOps& ops,
                            const Eigen::MatrixXd& x, ForwardCache& c) {
  if (static_cast<std::size_t>(x.cols()) != p.input_dim()) {
    throw Error(ErrorKind::invalid_argument, "feature dimension does not match encoder");
  }
  if (p.variant == EncoderVariant::gcn) {
    c.ax = ops.a_hat * x;
    c.p1 = c.ax * p.w1;
    c.h1 = c.p1.cwiseMax(0.0);
    c.ah = ops.a_hat * c.h1;
    c.zr = c.ah * p.w2;
  } else {
    c.p1 = gat_forward(x, p.w1, p.att1_src, p.att1_dst, ops.mask, c.l1);
    c.h1 = c.p1.cwiseMax(0.0);
    c.zr = gat_forward(c.h1, p.w2, p.att2_src, p.att2_dst, ops.mask, c.l2);
  }
  c.norms = c.zr.rowwise().norm().cwiseMax(1e-12);
  c.z = c.norms.cwiseInverse().asDiagonal() * c.zr;
  return c.z;
}

std::vector<double> run_backward(const EncoderParams& p, const GraphOps& ops,
                                 const ForwardCache& c, const Eigen::MatrixXd& dz) {
  // Through row normalization: dzr_i = (dz_i - z_i (z_i . dz_i)) / |zr_i|.
  Eigen::VectorXd proj = (c.z.array() * dz.array()).rowwise().sum();
  Eigen::MatrixXd dzr =
      c.norms.cwiseInverse().asDiagonal() * (dz - proj.asDiagonal() * c.z);

  EncoderParams g = p;
  if (p.variant == EncoderVariant::gcn) {
    g.w2 = c.ah.transpose() * dzr;
    Eigen::MatrixXd dh1 = ops.a_hat.transpose() * (dzr * p.w2.transpose());
    Eigen::MatrixXd dp1 = (c.p1.array() > 0.0).select(dh1, 0.0);
    g.w1 = c.ax.transpose() * dp1;
  } else {
    auto l2 = gat_backward(c.l2, p.w2, p.att2_src, p.att2_dst, ops.mask, dzr);
    Eigen::MatrixXd dp1 = (c.p1.array() > 0.0).select(l2.input, 0.0);
    auto l1 = gat_backward(c.l1, p.w1, p.att1_src, p.att1_dst, ops.mask, dp1);
    g.w1 = l1.w;
    g.w2 = l2.w;
    g.att1_src = l1.a_src;
    g.att1_dst = l1.a_dst;
    g.att2_src = l2.a_src;
    g.att2_dst = l2.a_dst;
  }
  return g.parameters();
}

std::map<NodeId, Eigen::Index> feature_index(const NodeFeatures& f) {
  std::map<NodeId, Eigen::Index> idx;
  for (std::size_t i = 0; i < f.nodes.size(); ++i) {
    idx[f.nodes[i]] = static_cast<Eigen::Index>(i);
  }
  return idx;
}

}  // namespace

EmbeddingTable forward(const EncoderParams& params, const NodeFeatures& features,
                       const Skeleton& adjacency) {
  auto ops = build_graph(features, adjacency);
  ForwardCache cache;
  return EmbeddingTable(features.nodes, run_forward(params, ops, features.values, cache));
}

double cosine_distance(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0) return 1.0;
  return 1.0 - u.dot(v) / (nu * nv);
}

double triplet_hinge(double d_ap, double d_an, double margin) {
  return std::max(0.0, margin + d_ap - d_an);
}

double triplet_loss(const EncoderParams& params, const NodeFeatures& features,
                    const Skeleton& adjacency, const std::vector<Triplet>& triplets,
                    std::vector<double>* grad) {
  auto ops = build_graph(features, adjacency);
  auto idx = feature_index(features);
  ForwardCache cache;
  const Eigen::MatrixXd z = run_forward(params, ops, features.values, cache);
  Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(z.rows(), z.cols());
  auto row = [&](const NodeId& n) {
    auto it = idx.find(n);
    if (it == idx.end()) throw Error(ErrorKind::not_found, "triplet node '" + n + "' unknown");
    return it->second;
  };
  double loss = 0.0;
  for (const auto& tr : triplets) {
    const auto a = row(tr.anchor), pos = row(tr.positive), neg = row(tr.negative);
    // Rows are unit norm, so d(u, v) = 1 - u . v.
    const double d_ap = 1.0 - z.row(a).dot(z.row(pos));
    const double d_an = 1.0 - z.row(a).dot(z.row(neg));
    const double l = triplet_hinge(d_ap, d_an, params.margin);
    loss += l;
    if (l > 0.0) {
      dz.row(a) += z.row(neg) - z.row(pos);
      dz.row(pos) -= z.row(a);
      dz.row(neg) += z.row(a);
    }
  }
  if (grad) *grad = run_backward(params, ops, cache, dz);
  return loss;
}

std::vector<Triplet> sample_triplets(const Skeleton& adjacency,
                                     const std::vector<NodeId>& nodes,
                                     std::mt19937_64& rng) {
  std::vector<NodeId> sorted = nodes;
  std::sort(sorted.begin(), sorted.end());
  std::vector<Triplet> out;
  for (const auto& anchor : sorted) {
    auto positives = adjacency.neighbors(anchor);
    if (positives.empty()) continue;
    std::vector<NodeId> negatives;
    for (const auto& n : sorted) {
      if (n != anchor && !adjacency.adjacent(anchor, n)) negatives.push_back(n);
    }
    if (negatives.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, negatives.size() - 1);
    for (const auto& p : positives) out.push_back({anchor, p, negatives[pick(rng)]});
  }
  return out;
}

EncoderTrainResult train_contrastive(const NodeFeatures& features,
                                     const Skeleton& adjacency,
                                     const EncoderTrainConfig& config) {
  if (adjacency.adjacency.empty()) {
    throw Error(ErrorKind::invalid_argument, "no valid triplet: skeleton has no edges");
  }
  EncoderTrainResult result;
  result.params = init_encoder(config.variant, kFeatureDim, config.hidden, config.dim,
                               config.margin, config.seed);
  std::mt19937_64 rng(config.seed + 1);
  std::vector<double> grad;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto triplets = sample_triplets(adjacency, features.nodes, rng);
    if (triplets.empty()) {
      throw Error(ErrorKind::invalid_argument,
                  "no valid triplet: every node is adjacent to all others");
    }
    double loss = triplet_loss(result.params, features, adjacency, triplets, &grad);
    result.loss_history.push_back(loss);
    auto values = result.params.parameters();
    for (std::size_t k = 0; k < values.size(); ++k) values[k] -= config.lr * grad[k];
    result.params.set_parameters(values);
  }
  return result;
}

double gradient_check(const EncoderParams& params, const NodeFeatures& features,
                      const Skeleton& adjacency, const Triplet& triplet, double step) {
  std::vector<Triplet> one{triplet};
  std::vector<double> analytic;
  triplet_loss(params, features, adjacency, one, &analytic);
  EncoderParams probe = params;
  auto values = probe.parameters();
  auto numeric = numeric_gradient(values, [&] {
    probe.set_parameters(values);
    return triplet_loss(probe, features, adjacency, one);
  }, step);
  return max_relative_error(analytic, numeric);
}

}  // namespace causaldiag
