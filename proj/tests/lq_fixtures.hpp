#pragma once

#include <random>

#include "magps/lq_game.hpp"

namespace support {

/// Random stabilizing profile of `game`, entries uniform in [lo, hi].
inline magps::FeedbackProfile random_stabilizing_profile(const magps::LinearQuadraticGame& game,
                                                         std::mt19937_64& rng, double lo = -0.3,
                                                         double hi = 1.0, double max_radius = 0.95) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (;;) {
    auto K = magps::FeedbackProfile::zeros(game);
    for (auto& g : K.gains)
      for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = u(rng);
    if (magps::spectral_radius(magps::closed_loop(game, K)) < max_radius) return K;
  }
}

/// sum_{t <= steps} over the initial distribution of x_t' W x_t, x_{t+1} = Abar x_t.
inline double rollout_quadratic_sum(const magps::LinearQuadraticGame& game,
                                    const magps::FeedbackProfile& K, const magps::Matrix& W,
                                    int steps = 5000) {
  const magps::Matrix abar = magps::closed_loop(game, K);
  double total = 0.0;
  for (const auto& ws : game.initial_states) {
    magps::Vector x = ws.x;
    for (int t = 0; t <= steps; ++t) {
      total += ws.probability * x.dot(W * x);
      x = abar * x;
    }
  }
  return total;
}

/// Scalar single-agent game x+ = a x + b u, cost q x^2 + r u^2.
inline magps::LinearQuadraticGame scalar_game(double a, double b, double q, double r,
                                              double sigma0 = 1.0) {
  magps::LinearQuadraticGame g;
  g.A = magps::Matrix::Constant(1, 1, a);
  g.B = {magps::Matrix::Constant(1, 1, b)};
  g.Q = {magps::Matrix::Constant(1, 1, q)};
  g.R = {magps::Matrix::Constant(1, 1, r)};
  g.sigma0 = magps::Matrix::Constant(1, 1, sigma0);
  return g;
}

inline magps::FeedbackProfile scalar_profile(double k) {
  return magps::FeedbackProfile{{magps::Matrix::Constant(1, 1, k)}};
}

}  // namespace support
