#pragma once

// Finite-difference checks shared by the unit tests and the acceptance binary.

#include <random>
#include <string>
#include <vector>

#include "causaldiag/encoder.hpp"
#include "causaldiag/hrl.hpp"
#include "causaldiag/nn.hpp"

namespace grad_checks {

inline causaldiag::EmbeddingTable random_embeddings(std::size_t n, std::size_t dim,
                                                    std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<causaldiag::NodeId> nodes;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    nodes.push_back("v" + std::to_string(i));
    for (std::size_t k = 0; k < dim; ++k) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = normal(rng);
    }
  }
  return causaldiag::EmbeddingTable(std::move(nodes), m);
}

/// Max relative error of the analytic gradient of `model` under `loss`.
template <typename Loss>
double check_mlp(causaldiag::Mlp& model, Loss loss) {
  causaldiag::MlpGrad grad(model);
  loss(model, &grad);
  auto analytic = grad.flatten();
  auto params = model.parameters();
  auto numeric = causaldiag::numeric_gradient(params, [&] {
    causaldiag::Mlp probe = model;
    probe.set_parameters(params);
    return loss(probe, nullptr);
  });
  return causaldiag::max_relative_error(analytic, numeric);
}

inline double bradley_terry_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto emb = random_embeddings(6, 4, rng);
  std::vector<causaldiag::FeedbackTriplet> triplets;
  std::uniform_int_distribution<int> pick(0, 5);
  for (int k = 0; k < 8; ++k) {
    int t = pick(rng), a = pick(rng), b = pick(rng);
    triplets.push_back({"q", "v" + std::to_string(t), "v" + std::to_string(a),
                        "v" + std::to_string(b), 0, causaldiag::FeedbackSource::oracle});
  }
  auto model = causaldiag::Mlp::init(8, 6, rng, false);
  return check_mlp(model, [&](const causaldiag::Mlp& m, causaldiag::MlpGrad* g) {
    return causaldiag::bradley_terry_loss(m, triplets, emb, g);
  });
}

inline std::vector<causaldiag::ReplaySample> random_batch(std::size_t dim, std::size_t size,
                                                          std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<causaldiag::ReplaySample> batch;
  for (std::size_t k = 0; k < size; ++k) {
    Eigen::VectorXd s(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = normal(rng);
    batch.push_back({s, unit(rng), normal(rng)});
  }
  return batch;
}

inline double critic_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto batch = random_batch(8, 10, rng);
  auto critic = causaldiag::Mlp::init(9, 6, rng, false);
  return check_mlp(critic, [&](const causaldiag::Mlp& m, causaldiag::MlpGrad* g) {
    return causaldiag::critic_loss(m, batch, g);
  });
}

inline double actor_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto batch = random_batch(8, 10, rng);
  // A non-zero output layer so the actor is not stuck at 0.5.
  auto actor = causaldiag::Mlp::init(8, 6, rng, false);
  auto critic = causaldiag::Mlp::init(9, 6, rng, false);
  return check_mlp(actor, [&](const causaldiag::Mlp& m, causaldiag::MlpGrad* g) {
    return causaldiag::actor_loss(m, critic, batch, g);
  });
}

}  // namespace grad_checks
