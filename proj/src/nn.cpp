#include "causaldiag/nn.hpp"

#include <algorithm>
#include <cmath>

#include "causaldiag/error.hpp"

namespace causaldiag {

Mlp Mlp::init(std::size_t input, std::size_t hidden, std::mt19937_64& rng,
              bool zero_output) {
  Mlp m;
  const auto in = static_cast<Eigen::Index>(input);
  const auto h = static_cast<Eigen::Index>(hidden);
  double limit1 = std::sqrt(6.0 / static_cast<double>(input + hidden));
  std::uniform_real_distribution<double> u1(-limit1, limit1);
  m.w1.resize(h, in);
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < in; ++c) m.w1(r, c) = u1(rng);
  }
  m.b1 = Eigen::VectorXd::Zero(h);
  m.w2 = Eigen::VectorXd::Zero(h);
  if (!zero_output) {
    double limit2 = std::sqrt(6.0 / static_cast<double>(hidden + 1));
    std::uniform_real_distribution<double> u2(-limit2, limit2);
    for (Eigen::Index r = 0; r < h; ++r) m.w2(r) = u2(rng);
  }
  m.b2 = 0.0;
  return m;
}

double Mlp::forward(const Eigen::VectorXd& x) const {
  Cache cache;
  return forward(x, cache);
}

double Mlp::forward(const Eigen::VectorXd& x, Cache& cache) const {
  if (x.size() != w1.cols()) {
    throw Error(ErrorKind::invalid_argument, "MLP input dimension mismatch");
  }
  cache.x = x;
  cache.pre = w1 * x + b1;
  cache.hidden = cache.pre.cwiseMax(0.0);
  return w2.dot(cache.hidden) + b2;
}

Eigen::VectorXd Mlp::backward(const Cache& cache, double dy, MlpGrad& grad) const {
  grad.b2 += dy;
  grad.w2 += dy * cache.hidden;
  Eigen::VectorXd dpre = dy * w2;
  for (Eigen::Index k = 0; k < dpre.size(); ++k) {
    if (cache.pre(k) <= 0.0) dpre(k) = 0.0;
  }
  grad.b1 += dpre;
  grad.w1 += dpre * cache.x.transpose();
  return w1.transpose() * dpre;
}

void Mlp::apply(const MlpGrad& grad, double lr) {
  w1 -= lr * grad.w1;
  b1 -= lr * grad.b1;
  w2 -= lr * grad.w2;
  b2 -= lr * grad.b2;
}

std::size_t Mlp::parameter_count() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + 1);
}

std::vector<double> Mlp::parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (Eigen::Index r = 0; r < w1.rows(); ++r) {
    for (Eigen::Index c = 0; c < w1.cols(); ++c) out.push_back(w1(r, c));
  }
  for (Eigen::Index k = 0; k < b1.size(); ++k) out.push_back(b1(k));
  for (Eigen::Index k = 0; k < w2.size(); ++k) out.push_back(w2(k));
  out.push_back(b2);
  return out;
}

void Mlp::set_parameters(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw Error(ErrorKind::invalid_argument, "MLP parameter count mismatch");
  }
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < w1.rows(); ++r) {
    for (Eigen::Index c = 0; c < w1.cols(); ++c) w1(r, c) = values[i++];
  }
  for (Eigen::Index k = 0; k < b1.size(); ++k) b1(k) = values[i++];
  for (Eigen::Index k = 0; k < w2.size(); ++k) w2(k) = values[i++];
  b2 = values[i];
}

MlpGrad::MlpGrad(const Mlp& shape)
    : w1(Eigen::MatrixXd::Zero(shape.w1.rows(), shape.w1.cols())),
      b1(Eigen::VectorXd::Zero(shape.b1.size())),
      w2(Eigen::VectorXd::Zero(shape.w2.size())) {}

std::vector<double> MlpGrad::flatten() const {
  std::vector<double> out;
  for (Eigen::Index r = 0; r < w1.rows(); ++r) {
    for (Eigen::Index c = 0; c < w1.cols(); ++c) out.push_back(w1(r, c));
  }
  for (Eigen::Index k = 0; k < b1.size(); ++k) out.push_back(b1(k));
  for (Eigen::Index k = 0; k < w2.size(); ++k) out.push_back(w2(k));
  out.push_back(b2);
  return out;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw Error(ErrorKind::parse, "ragged matrix in JSON");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
  }
  return m;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  auto values = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

nlohmann::json to_json(const Mlp& mlp) {
  return {{"w1", matrix_to_json(mlp.w1)},
          {"b1", vector_to_json(mlp.b1)},
          {"w2", vector_to_json(mlp.w2)},
          {"b2", mlp.b2}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  try {
    Mlp m;
    m.w1 = matrix_from_json(j.at("w1"));
    m.b1 = vector_from_json(j.at("b1"));
    m.w2 = vector_from_json(j.at("w2"));
    m.b2 = j.at("b2").get<double>();
    if (m.b1.size() != m.w1.rows() || m.w2.size() != m.w1.rows()) {
      throw Error(ErrorKind::parse, "inconsistent MLP dimensions");
    }
    return m;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::parse, std::string("invalid MLP JSON: ") + ex.what());
  }
}

std::vector<double> numeric_gradient(std::vector<double>& params,
                                     const std::function<double()>& loss,
                                     double step) {
  std::vector<double> grad(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = params[k];
    params[k] = saved + step;
    const double plus = loss();
    params[k] = saved - step;
    const double minus = loss();
    params[k] = saved;
    grad[k] = (plus - minus) / (2.0 * step);
  }
  return grad;
}

double max_relative_error(std::span<const double> analytic,
                          std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) {
    throw Error(ErrorKind::invalid_argument, "gradient size mismatch");
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    double denom = std::max(std::abs(analytic[k]) + std::abs(numeric[k]), 1e-6);
    worst = std::max(worst, std::abs(analytic[k] - numeric[k]) / denom);
  }
  return worst;
}

}  // namespace causaldiag
