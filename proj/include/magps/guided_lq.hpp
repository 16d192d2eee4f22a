#pragma once

// LQ games whose costs carry a guiding-policy penalty
//   rho * x' (K^i - Kc^i)' R^i (K^i - Kc^i) x
// together with the diagnostics used to study how the penalty stabilizes
// gradient play and how far it biases the equilibrium.

#include <complex>
#include <optional>
#include <vector>

#include "magps/lq_game.hpp"

namespace magps {

class InvalidStationaryPoint : public Error {
 public:
  using Error::Error;
};

struct RegularizedLQGame {
  LinearQuadraticGame base;
  FeedbackProfile guide;
  double rho = 0.0;

  void validate(const NumericsConfig& cfg = default_numerics()) const {
    base.validate();
    check_profile(base, guide);
    if (!(rho >= 0.0)) throw Error("regularized game: rho must be nonnegative");
    if (!is_stabilizing(base, guide, cfg)) throw Error("regularized game: guide is not stabilizing");
  }

  detail::Regularization regularization() const { return {&guide, rho}; }
};

/// Guide K^i + offset applied entry-wise to every agent.
inline FeedbackProfile biased_guide(const FeedbackProfile& K, double offset) {
  FeedbackProfile g = K;
  for (auto& m : g.gains) m.array() += offset;
  return g;
}

inline Matrix regularized_value_matrix(const RegularizedLQGame& rg, const FeedbackProfile& K, int i,
                                       const NumericsConfig& cfg = default_numerics()) {
  check_agent(rg.base, i);
  const Matrix abar = detail::stable_closed_loop(rg.base, K, cfg);
  return detail::value_matrix(rg.base, K, i, abar, rg.regularization(), cfg);
}

inline double regularized_cost(const RegularizedLQGame& rg, const FeedbackProfile& K, int i,
                               const NumericsConfig& cfg = default_numerics()) {
  return (regularized_value_matrix(rg, K, i, cfg) * rg.base.sigma0).trace();
}

inline Matrix regularized_policy_gradient(const RegularizedLQGame& rg, const FeedbackProfile& K,
                                          int i, const NumericsConfig& cfg = default_numerics()) {
  check_agent(rg.base, i);
  const auto reg = rg.regularization();
  const Matrix abar = detail::stable_closed_loop(rg.base, K, cfg);
  const Matrix sigma = detail::state_covariance(rg.base, abar, cfg);
  const Matrix P = detail::value_matrix(rg.base, K, i, abar, reg, cfg);
  return detail::policy_gradient(rg.base, K, i, abar, P, sigma, reg);
}

inline Vector regularized_pseudo_gradient(const RegularizedLQGame& rg, const FeedbackProfile& K,
                                          const NumericsConfig& cfg = default_numerics()) {
  return detail::pseudo_gradient(rg.base, K, rg.regularization(), cfg);
}

/// ||R^i K^i - (B^i' P^i Abar + rho R^i Kc^i) / (1 + rho)||_F.
inline double regularized_nash_residual(const RegularizedLQGame& rg, const FeedbackProfile& K,
                                        int i, const NumericsConfig& cfg = default_numerics()) {
  check_agent(rg.base, i);
  return detail::stationarity_residual(rg.base, K, i, rg.regularization(), cfg);
}

/// Nash equilibrium of the regularized game. Starts from the guide unless an
/// initial profile is supplied.
inline NashSolution solve_regularized_nash(const RegularizedLQGame& rg,
                                           std::optional<FeedbackProfile> initial = std::nullopt,
                                           const NumericsConfig& cfg = default_numerics()) {
  return detail::lyapunov_iteration(rg.base, initial ? *initial : rg.guide, rg.regularization(),
                                    cfg);
}

inline GradientPlayResult guided_gradient_play(const RegularizedLQGame& rg,
                                               const FeedbackProfile& K0, double eta, long steps,
                                               long record_every = 1,
                                               const NumericsConfig& cfg = default_numerics()) {
  detail::stable_closed_loop(rg.base, K0, cfg);
  return run_gradient_play(
      [&](const FeedbackProfile& p) { return regularized_pseudo_gradient(rg, p, cfg); }, K0, eta,
      steps, record_every);
}

inline Matrix regularized_pseudo_gradient_jacobian(const RegularizedLQGame& rg,
                                                   const FeedbackProfile& K,
                                                   const NumericsConfig& cfg = default_numerics()) {
  return finite_difference_jacobian(
      [&](const FeedbackProfile& p) { return regularized_pseudo_gradient(rg, p, cfg); }, K,
      cfg.jacobian_step);
}

/// Eigenvalues of the finite-difference Jacobian of the regularized
/// pseudo-gradient. Gradient play is locally stable when all real parts are
/// positive.
inline std::vector<std::complex<double>> stability_diagnostic(
    const RegularizedLQGame& rg, const FeedbackProfile& K,
    const NumericsConfig& cfg = default_numerics()) {
  return eigenvalues(regularized_pseudo_gradient_jacobian(rg, K, cfg));
}

inline double min_real_part(const std::vector<std::complex<double>>& values) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& v : values) m = std::min(m, v.real());
  return m;
}

struct BiasBound {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds(double slack = 1e-9) const { return lhs <= rhs + slack; }
};

/// Per agent:
///   lhs = || Kh^i - (rho Kc^i + K^i) / (1 + rho) ||_2
///   rhs = ||R^i^{-1}||_2 ||B^i'||_2 || Ph^i Abar(Kh) - P^i Abar(K) ||_2 / (1 + rho)
/// with spectral norms throughout. Both profiles are verified first.
inline std::vector<BiasBound> bias_bound(const RegularizedLQGame& rg, const FeedbackProfile& nash,
                                         const FeedbackProfile& regularized_nash,
                                         const NumericsConfig& cfg = default_numerics()) {
  const auto& g = rg.base;
  const int N = g.agent_count();
  for (int i = 0; i < N; ++i) {
    if (nash_residual(g, nash, i, cfg) > cfg.nash_residual_tolerance)
      throw InvalidStationaryPoint("bias_bound: first profile is not a Nash equilibrium");
    if (regularized_nash_residual(rg, regularized_nash, i, cfg) > cfg.nash_residual_tolerance)
      throw InvalidStationaryPoint("bias_bound: second profile is not a regularized Nash equilibrium");
  }
  const Matrix abar = closed_loop(g, nash);
  const Matrix abar_hat = closed_loop(g, regularized_nash);
  std::vector<BiasBound> out;
  for (int i = 0; i < N; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const Matrix anchor = (rg.rho * rg.guide[ui] + nash[ui]) / (1.0 + rg.rho);
    const Matrix P = value_matrix(g, nash, i, cfg);
    const Matrix P_hat = regularized_value_matrix(rg, regularized_nash, i, cfg);
    BiasBound b;
    b.lhs = spectral_norm(regularized_nash[ui] - anchor);
    b.rhs = spectral_norm(g.R[ui].inverse()) * spectral_norm(g.B[ui].transpose()) *
            spectral_norm(P_hat * abar_hat - P * abar) / (1.0 + rg.rho);
    out.push_back(b);
  }
  return out;
}

}  // namespace magps
