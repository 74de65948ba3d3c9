#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace causaldiag {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(sigmoid(x)) without overflow.
inline double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

struct MlpGrad;

/// Two-layer perceptron with a ReLU hidden layer and a scalar linear output:
///   y = w2 . relu(W1 x + b1) + b2
struct Mlp {
  Eigen::MatrixXd w1;  // hidden x input
  Eigen::VectorXd b1;  // hidden
  Eigen::VectorXd w2;  // hidden
  double b2 = 0.0;

  struct Cache {
    Eigen::VectorXd x;
    Eigen::VectorXd pre;
    Eigen::VectorXd hidden;
  };

  /// Glorot-uniform hidden layer; the output layer is zeroed when
  /// `zero_output` is set, otherwise also Glorot-uniform. Biases start at 0.
  static Mlp init(std::size_t input, std::size_t hidden, std::mt19937_64& rng,
                  bool zero_output);

  std::size_t input_dim() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(w1.rows()); }

  double forward(const Eigen::VectorXd& x) const;
  double forward(const Eigen::VectorXd& x, Cache& cache) const;

  /// Accumulates dL/dparams into `grad` given dL/dy and returns dL/dx.
  Eigen::VectorXd backward(const Cache& cache, double dy, MlpGrad& grad) const;

  void apply(const MlpGrad& grad, double lr);

  std::size_t parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> values);

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

struct MlpGrad {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::VectorXd w2;
  double b2 = 0.0;

  explicit MlpGrad(const Mlp& shape);
  std::vector<double> flatten() const;
};

nlohmann::json to_json(const Mlp& mlp);
Mlp mlp_from_json(const nlohmann::json& j);

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);

/// Central finite differences of `loss` with respect to `params`, perturbing
/// one coordinate at a time. `params` is restored before returning.
std::vector<double> numeric_gradient(std::vector<double>& params,
                                     const std::function<double()>& loss,
                                     double step = 1e-5);

/// max_k |a_k - n_k| / max(|a_k| + |n_k|, 1e-6)
double max_relative_error(std::span<const double> analytic,
                          std::span<const double> numeric);

}  // namespace causaldiag
