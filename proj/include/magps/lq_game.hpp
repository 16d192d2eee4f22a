#pragma once

// Infinite-horizon linear-quadratic games: value matrices, costs, analytic
// policy gradients, the pseudo-gradient, a Lyapunov-iteration Nash solver and
// simultaneous gradient play.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "magps/numerics.hpp"

namespace magps {

struct WeightedState {
  Vector x;
  double probability = 0.0;
};

struct LinearQuadraticGame {
  Matrix A;
  std::vector<Matrix> B;
  std::vector<Matrix> Q;
  std::vector<Matrix> R;
  Matrix sigma0;
  // Optional discrete initial distribution; when present it defines sigma0.
  std::vector<WeightedState> initial_states;

  int state_dim() const { return static_cast<int>(A.rows()); }
  int agent_count() const { return static_cast<int>(B.size()); }
  int control_dim(int i) const { return static_cast<int>(B.at(static_cast<std::size_t>(i)).cols()); }
  int total_control_dim() const {
    int m = 0;
    for (const auto& b : B) m += static_cast<int>(b.cols());
    return m;
  }

  /// Second moment sum_k p_k x_k x_k' of a discrete distribution.
  static Matrix second_moment(const std::vector<WeightedState>& states) {
    require(!states.empty(), "second_moment: empty distribution");
    const auto n = states.front().x.size();
    Matrix s = Matrix::Zero(n, n);
    for (const auto& ws : states) {
      require(ws.x.size() == n, "second_moment: inconsistent state dimensions");
      s += ws.probability * ws.x * ws.x.transpose();
    }
    return s;
  }

  /// Throws DimensionMismatch or Error describing the first broken invariant.
  void validate() const {
    const auto n = A.rows();
    require(n > 0 && A.cols() == n, "game: A must be square and non-empty");
    require(!B.empty(), "game: at least one agent required");
    require(Q.size() == B.size() && R.size() == B.size(),
            "game: B, Q and R must have one entry per agent");
    for (std::size_t i = 0; i < B.size(); ++i) {
      require(B[i].rows() == n && B[i].cols() > 0, "game: B[i] must be n x m_i");
      require(Q[i].rows() == n && Q[i].cols() == n, "game: Q[i] must be n x n");
      require(R[i].rows() == B[i].cols() && R[i].cols() == B[i].cols(),
              "game: R[i] must be m_i x m_i");
      if ((Q[i] - Q[i].transpose()).norm() > 1e-12 || min_symmetric_eigenvalue(Q[i]) <= 0.0)
        throw Error("game: Q[" + std::to_string(i) + "] must be symmetric positive definite");
      if ((R[i] - R[i].transpose()).norm() > 1e-12 || min_symmetric_eigenvalue(R[i]) <= 0.0)
        throw Error("game: R[" + std::to_string(i) + "] must be symmetric positive definite");
    }
    require(sigma0.rows() == n && sigma0.cols() == n, "game: sigma0 must be n x n");
    if (min_symmetric_eigenvalue(sigma0) <= 0.0) throw Error("game: sigma0 must be full rank");
    if (!initial_states.empty()) {
      if ((second_moment(initial_states) - sigma0).norm() > 1e-12)
        throw Error("game: initial_states inconsistent with sigma0");
    }
    if (!all_finite(A)) throw Error("game: non-finite entries in A");
  }
};

/// The two-player game used for the limit-cycle study.
inline LinearQuadraticGame reference_game() {
  LinearQuadraticGame g;
  g.A.resize(2, 2);
  g.A << 0.5880, 0.0280,
         0.5700, 0.0560;
  Matrix b1(2, 1), b2(2, 1);
  b1 << 1.0, 0.1;
  b2 << 0.0, 1.0;
  g.B = {b1, b2};
  Matrix q1 = Matrix::Zero(2, 2), q2 = Matrix::Zero(2, 2);
  q1.diagonal() << 0.01, 1.0;
  q2.diagonal() << 1.0, 0.0147;
  g.Q = {q1, q2};
  g.R = {Matrix::Constant(1, 1, 0.01), Matrix::Constant(1, 1, 0.01)};
  Vector xa(2), xb(2);
  xa << 1.0, 1.0;
  xb << 1.0, 1.1;
  g.initial_states = {{xa, 0.5}, {xb, 0.5}};
  g.sigma0 = LinearQuadraticGame::second_moment(g.initial_states);
  return g;
}

/// Per-agent gains K^i (m_i x n); agent i plays u^i = -K^i x.
struct FeedbackProfile {
  std::vector<Matrix> gains;

  std::size_t size() const { return gains.size(); }
  const Matrix& operator[](std::size_t i) const { return gains[i]; }
  Matrix& operator[](std::size_t i) { return gains[i]; }

  static FeedbackProfile zeros(const LinearQuadraticGame& game) {
    FeedbackProfile k;
    for (int i = 0; i < game.agent_count(); ++i)
      k.gains.push_back(Matrix::Zero(game.control_dim(i), game.state_dim()));
    return k;
  }

  Eigen::Index parameter_count() const {
    Eigen::Index c = 0;
    for (const auto& g : gains) c += g.size();
    return c;
  }

  /// Agent-major, row-major within each gain.
  Vector flatten() const {
    Vector v(parameter_count());
    Eigen::Index o = 0;
    for (const auto& g : gains)
      for (Eigen::Index r = 0; r < g.rows(); ++r)
        for (Eigen::Index c = 0; c < g.cols(); ++c) v(o++) = g(r, c);
    return v;
  }

  /// Inverse of flatten, using this profile's shapes.
  FeedbackProfile unflatten(const Vector& v) const {
    require(v.size() == parameter_count(), "unflatten: length mismatch");
    FeedbackProfile out = *this;
    Eigen::Index o = 0;
    for (auto& g : out.gains)
      for (Eigen::Index r = 0; r < g.rows(); ++r)
        for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = v(o++);
    return out;
  }

  FeedbackProfile operator+(const FeedbackProfile& o) const { return unflatten(flatten() + o.flatten()); }
  FeedbackProfile operator-(const FeedbackProfile& o) const { return unflatten(flatten() - o.flatten()); }
};

/// Frobenius distance between stacked profiles.
inline double distance(const FeedbackProfile& a, const FeedbackProfile& b) {
  return (a.flatten() - b.flatten()).norm();
}

inline void check_profile(const LinearQuadraticGame& game, const FeedbackProfile& K) {
  require(static_cast<int>(K.size()) == game.agent_count(), "profile: wrong agent count");
  for (int i = 0; i < game.agent_count(); ++i) {
    const auto& g = K[static_cast<std::size_t>(i)];
    require(g.rows() == game.control_dim(i) && g.cols() == game.state_dim(),
            "profile: gain " + std::to_string(i) + " has wrong shape");
  }
}

inline void check_agent(const LinearQuadraticGame& game, int i) {
  if (i < 0 || i >= game.agent_count())
    throw Error("invalid agent index " + std::to_string(i));
}

inline Matrix closed_loop(const LinearQuadraticGame& game, const FeedbackProfile& K) {
  check_profile(game, K);
  Matrix abar = game.A;
  for (std::size_t i = 0; i < K.size(); ++i) abar -= game.B[i] * K[i];
  return abar;
}

inline bool is_stabilizing(const LinearQuadraticGame& game, const FeedbackProfile& K,
                           const NumericsConfig& cfg = default_numerics()) {
  return spectral_radius(closed_loop(game, K)) < 1.0 - cfg.stability_margin;
}

namespace detail {

inline Matrix stable_closed_loop(const LinearQuadraticGame& game, const FeedbackProfile& K,
                                 const NumericsConfig& cfg) {
  Matrix abar = closed_loop(game, K);
  const double radius = spectral_radius(abar);
  if (!(radius < 1.0 - cfg.stability_margin))
    throw NotStabilizing("profile is not stabilizing", radius);
  return abar;
}

// Regularization data for the guided game; rho = 0 leaves every formula
// identical to the unregularized one.
struct Regularization {
  const FeedbackProfile* guide = nullptr;
  double rho = 0.0;
  bool active() const { return guide != nullptr && rho != 0.0; }
};

inline Matrix stage_weight(const LinearQuadraticGame& game, const FeedbackProfile& K, int i,
                           const Regularization& reg) {
  const auto ui = static_cast<std::size_t>(i);
  Matrix w = K[ui].transpose() * game.R[ui] * K[ui] + game.Q[ui];
  if (reg.active()) {
    const Matrix d = K[ui] - (*reg.guide)[ui];
    w += reg.rho * d.transpose() * game.R[ui] * d;
  }
  return w;
}

inline Matrix value_matrix(const LinearQuadraticGame& game, const FeedbackProfile& K, int i,
                           const Matrix& abar, const Regularization& reg,
                           const NumericsConfig& cfg) {
  return solve_discrete_lyapunov(abar, stage_weight(game, K, i, reg), cfg);
}

inline Matrix state_covariance(const LinearQuadraticGame& game, const Matrix& abar,
                               const NumericsConfig& cfg) {
  return solve_discrete_lyapunov(abar.transpose(), game.sigma0, cfg);
}

// 2((1+rho) R K - rho R Kc - B' P Abar) Sigma
inline Matrix policy_gradient(const LinearQuadraticGame& game, const FeedbackProfile& K, int i,
                              const Matrix& abar, const Matrix& P, const Matrix& sigma,
                              const Regularization& reg) {
  const auto ui = static_cast<std::size_t>(i);
  Matrix inner = game.R[ui] * K[ui] - game.B[ui].transpose() * P * abar;
  if (reg.active())
    inner += reg.rho * game.R[ui] * (K[ui] - (*reg.guide)[ui]);
#ifdef MAGPS_INJECT_GRADIENT_FAULT
  // Test hook: a 1% error the self-test must detect.
  return 2.02 * inner * sigma;
#else
  return 2.0 * inner * sigma;
#endif
}

inline Vector pseudo_gradient(const LinearQuadraticGame& game, const FeedbackProfile& K,
                              const Regularization& reg, const NumericsConfig& cfg) {
  const Matrix abar = stable_closed_loop(game, K, cfg);
  const Matrix sigma = state_covariance(game, abar, cfg);
  FeedbackProfile grads = K;
  for (int i = 0; i < game.agent_count(); ++i) {
    const Matrix P = value_matrix(game, K, i, abar, reg, cfg);
    grads[static_cast<std::size_t>(i)] = policy_gradient(game, K, i, abar, P, sigma, reg);
  }
  return grads.flatten();
}

// Residual of R K - (B' P Abar + rho R Kc) / (1 + rho), the stationarity
// condition of the (regularized) Nash equilibrium.
inline double stationarity_residual(const LinearQuadraticGame& game, const FeedbackProfile& K,
                                    int i, const Regularization& reg,
                                    const NumericsConfig& cfg) {
  const auto ui = static_cast<std::size_t>(i);
  const Matrix abar = stable_closed_loop(game, K, cfg);
  const Matrix P = value_matrix(game, K, i, abar, reg, cfg);
  Matrix target = game.B[ui].transpose() * P * abar;
  if (reg.active()) target = (target + reg.rho * game.R[ui] * (*reg.guide)[ui]) / (1.0 + reg.rho);
  return (game.R[ui] * K[ui] - target).norm();
}

}  // namespace detail

inline Matrix value_matrix(const LinearQuadraticGame& game, const FeedbackProfile& K, int i,
                           const NumericsConfig& cfg = default_numerics()) {
  check_agent(game, i);
  const Matrix abar = detail::stable_closed_loop(game, K, cfg);
  return detail::value_matrix(game, K, i, abar, {}, cfg);
}

/// Sigma_K = sum_t E[x_t x_t'], i.e. the solution of Sigma = Sigma0 + Abar Sigma Abar'.
inline Matrix state_covariance(const LinearQuadraticGame& game, const FeedbackProfile& K,
                               const NumericsConfig& cfg = default_numerics()) {
  const Matrix abar = detail::stable_closed_loop(game, K, cfg);
  return detail::state_covariance(game, abar, cfg);
}

/// J^i(K) = trace(P^i Sigma0).
inline double agent_cost(const LinearQuadraticGame& game, const FeedbackProfile& K, int i,
                         const NumericsConfig& cfg = default_numerics()) {
  return (value_matrix(game, K, i, cfg) * game.sigma0).trace();
}

inline Matrix policy_gradient(const LinearQuadraticGame& game, const FeedbackProfile& K, int i,
                              const NumericsConfig& cfg = default_numerics()) {
  check_agent(game, i);
  const Matrix abar = detail::stable_closed_loop(game, K, cfg);
  const Matrix sigma = detail::state_covariance(game, abar, cfg);
  const Matrix P = detail::value_matrix(game, K, i, abar, {}, cfg);
  return detail::policy_gradient(game, K, i, abar, P, sigma, {});
}

/// Stacked policy gradients w(K), flattened agent-major then row-major.
inline Vector pseudo_gradient(const LinearQuadraticGame& game, const FeedbackProfile& K,
                              const NumericsConfig& cfg = default_numerics()) {
  return detail::pseudo_gradient(game, K, {}, cfg);
}

/// ||R^i K^i - B^i' P^i Abar||_F, zero exactly at a Nash equilibrium.
inline double nash_residual(const LinearQuadraticGame& game, const FeedbackProfile& K, int i,
                            const NumericsConfig& cfg = default_numerics()) {
  check_agent(game, i);
  return detail::stationarity_residual(game, K, i, {}, cfg);
}

using PseudoGradientFn = std::function<Vector(const FeedbackProfile&)>;

/// Central finite-difference Jacobian of a pseudo-gradient map; every probe
/// must remain stabilizing or NotStabilizing propagates.
inline Matrix finite_difference_jacobian(const PseudoGradientFn& w, const FeedbackProfile& K,
                                         double step) {
  const Vector k = K.flatten();
  const auto d = k.size();
  Matrix J(d, d);
  for (Eigen::Index c = 0; c < d; ++c) {
    Vector plus = k, minus = k;
    plus(c) += step;
    minus(c) -= step;
    J.col(c) = (w(K.unflatten(plus)) - w(K.unflatten(minus))) / (2.0 * step);
  }
  return J;
}

inline Matrix pseudo_gradient_jacobian(const LinearQuadraticGame& game, const FeedbackProfile& K,
                                       const NumericsConfig& cfg = default_numerics()) {
  return finite_difference_jacobian(
      [&](const FeedbackProfile& p) { return pseudo_gradient(game, p, cfg); }, K,
      cfg.jacobian_step);
}

/// Riccati value iteration from P = Q. Slow but needs no stabilizing start;
/// returns std::nullopt when P stops being finite or does not settle.
inline std::optional<Matrix> riccati_iteration_gain(const Matrix& A, const Matrix& B, const Matrix& Q,
                                                    const Matrix& R, int max_iterations = 100000) {
  Matrix P = Q;
  for (int it = 0; it < max_iterations; ++it) {
    const Matrix G = (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
    const Matrix next = Q + A.transpose() * P * (A - B * G);
    if (!next.allFinite()) return std::nullopt;
    const double change = (next - P).cwiseAbs().maxCoeff() / std::max(1.0, next.cwiseAbs().maxCoeff());
    P = 0.5 * (next + next.transpose());
    if (change <= 1e-13) return Matrix((R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A));
  }
  return std::nullopt;
}

/// Discrete LQR gain for x+ = A x + B u with cost x'Qx + u'Ru, by Hewer's
/// policy iteration. `initial` must be stabilizing. Without it the zero gain
/// starts the iteration when A is stable, and Riccati value iteration
/// otherwise.
inline Matrix lqr_gain(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                       std::optional<Matrix> initial = std::nullopt,
                       const NumericsConfig& cfg = default_numerics()) {
  Matrix K = initial ? *initial : Matrix::Zero(B.cols(), A.rows());
  if (!initial && spectral_radius(A) >= 1.0 - cfg.stability_margin) {
    const auto seed = riccati_iteration_gain(A, B, Q, R);
    if (!seed || spectral_radius(A - B * *seed) >= 1.0 - cfg.stability_margin)
      throw Error("lqr: (A, B) does not appear stabilizable");
    K = *seed;
  }
  for (int it = 0; it < 500; ++it) {
    const Matrix abar = A - B * K;
    const Matrix P = solve_discrete_lyapunov(abar, Q + K.transpose() * R * K, cfg);
    const Matrix next = (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
    const double change = (next - K).cwiseAbs().maxCoeff();
    K = next;
    if (change <= cfg.nash_step_tolerance) break;
  }
  return K;
}

struct NashSolution {
  FeedbackProfile profile;
  bool converged = false;
  int sweeps = 0;
  double pseudo_gradient_norm = std::numeric_limits<double>::infinity();
  std::vector<double> stationarity_residuals;
};

namespace detail {

// Gauss-Seidel Lyapunov iteration:
//   K^i <- ((1+rho) R^i + B^i' P^i B^i)^{-1} (B^i' P^i (A - sum_{j!=i} B^j K^j) + rho R^i Kc^i)
// with P^i the (regularized) value matrix at the current profile.
inline NashSolution lyapunov_iteration(const LinearQuadraticGame& game, FeedbackProfile K,
                                       const Regularization& reg, const NumericsConfig& cfg) {
  check_profile(game, K);
  stable_closed_loop(game, K, cfg);
  const int N = game.agent_count();

  auto evaluate = [&](const FeedbackProfile& p, NashSolution& s) {
    s.profile = p;
    s.pseudo_gradient_norm = detail::pseudo_gradient(game, p, reg, cfg).norm();
    s.stationarity_residuals.assign(static_cast<std::size_t>(N), 0.0);
    for (int i = 0; i < N; ++i)
      s.stationarity_residuals[static_cast<std::size_t>(i)] = stationarity_residual(game, p, i, reg, cfg);
    const double worst = *std::max_element(s.stationarity_residuals.begin(), s.stationarity_residuals.end());
    s.converged = s.pseudo_gradient_norm <= cfg.nash_residual_tolerance && worst <= cfg.nash_residual_tolerance;
  };

  NashSolution best;
  evaluate(K, best);
  int sweep = 0;
  bool settled = false;
  for (; sweep < cfg.nash_max_sweeps && !settled; ++sweep) {
    double change = 0.0;
    for (int i = 0; i < N; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      Matrix abar;
      try {
        abar = stable_closed_loop(game, K, cfg);
      } catch (const NotStabilizing&) {
        best.sweeps = sweep;
        return best;
      }
      const Matrix P = value_matrix(game, K, i, abar, reg, cfg);
      const Matrix others = abar + game.B[ui] * K[ui];
      Matrix lhs = game.R[ui] + game.B[ui].transpose() * P * game.B[ui];
      Matrix rhs = game.B[ui].transpose() * P * others;
      if (reg.active()) {
        lhs += reg.rho * game.R[ui];
        rhs += reg.rho * game.R[ui] * (*reg.guide)[ui];
      }
      const Matrix next = lhs.ldlt().solve(rhs);
      change = std::max(change, (next - K[ui]).cwiseAbs().maxCoeff());
      K[ui] = next;
    }
    settled = change <= cfg.nash_step_tolerance;
  }

  NashSolution last;
  try {
    evaluate(K, last);
  } catch (const NotStabilizing&) {
    best.sweeps = sweep;
    return best;
  }
  last.sweeps = sweep;
  if (!last.converged && best.pseudo_gradient_norm < last.pseudo_gradient_norm) {
    best.sweeps = sweep;
    return best;
  }
  return last;
}

}  // namespace detail

/// Per-agent LQR gains computed as if the other agents were absent.
inline FeedbackProfile independent_lqr_profile(const LinearQuadraticGame& game,
                                               const NumericsConfig& cfg = default_numerics()) {
  FeedbackProfile K = FeedbackProfile::zeros(game);
  if (spectral_radius(game.A) >= 1.0 - cfg.stability_margin) return K;
  for (int i = 0; i < game.agent_count(); ++i) {
    const auto ui = static_cast<std::size_t>(i);
    K[ui] = lqr_gain(game.A, game.B[ui], game.Q[ui], game.R[ui], std::nullopt, cfg);
  }
  return K;
}

/// One LQR controller for all agents at once (stacked inputs, summed state
/// costs), split into per-agent gains. Stabilizing whenever the game is
/// stabilizable; std::nullopt otherwise.
inline std::optional<FeedbackProfile> joint_lqr_profile(const LinearQuadraticGame& game,
                                                        const NumericsConfig& cfg = default_numerics()) {
  const int N = game.agent_count();
  Eigen::Index m = 0;
  for (const auto& b : game.B) m += b.cols();
  Matrix B(game.state_dim(), m), R = Matrix::Zero(m, m), Q = Matrix::Zero(game.state_dim(), game.state_dim());
  Eigen::Index col = 0;
  for (int i = 0; i < N; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const Eigen::Index mi = game.B[ui].cols();
    B.middleCols(col, mi) = game.B[ui];
    R.block(col, col, mi, mi) = game.R[ui];
    Q += game.Q[ui];
    col += mi;
  }
  const auto gain = riccati_iteration_gain(game.A, B, Q, R);
  if (!gain) return std::nullopt;
  FeedbackProfile K = FeedbackProfile::zeros(game);
  col = 0;
  for (int i = 0; i < N; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    K[ui] = gain->middleRows(col, game.B[ui].cols());
    col += game.B[ui].cols();
  }
  if (!is_stabilizing(game, K, cfg)) return std::nullopt;
  return K;
}

/// Feedback Nash equilibrium by Lyapunov iteration. Without `initial`, starts
/// from the independent LQR profile, falling back to the joint LQR profile
/// when A is unstable.
inline NashSolution solve_nash(const LinearQuadraticGame& game,
                               std::optional<FeedbackProfile> initial = std::nullopt,
                               const NumericsConfig& cfg = default_numerics()) {
  FeedbackProfile start;
  if (initial) {
    start = *initial;
  } else {
    start = independent_lqr_profile(game, cfg);
    if (!is_stabilizing(game, start, cfg)) start = joint_lqr_profile(game, cfg).value_or(start);
  }
  return detail::lyapunov_iteration(game, std::move(start), {}, cfg);
}

struct GradientPlayResult {
  // Recorded iterates and the iteration index of each.
  std::vector<FeedbackProfile> iterates;
  std::vector<long> iterations;
  bool left_stabilizing_set = false;
  long truncated_at = -1;
  FeedbackProfile final_profile;
};

/// Simultaneous gradient play K <- K - eta * w(K). Records every
/// `record_every`-th iterate (plus the first and last). Stops early, flagging
/// the result, if an iterate leaves the stabilizing set.
inline GradientPlayResult run_gradient_play(const PseudoGradientFn& w, FeedbackProfile K,
                                            double eta, long steps, long record_every = 1) {
  if (!(eta >= 0.0)) throw Error("gradient play: eta must be nonnegative");
  record_every = std::max(1L, record_every);
  GradientPlayResult out;
  out.iterates.push_back(K);
  out.iterations.push_back(0);
  Vector k = K.flatten();
  FeedbackProfile previous = K;
  for (long t = 1; t <= steps; ++t) {
    Vector g;
    try {
      g = w(K);
    } catch (const NotStabilizing&) {
      if (t == 1) throw;
      // Iterate t-1 left the set; the trajectory ends at iterate t-2.
      out.left_stabilizing_set = true;
      out.truncated_at = t - 1;
      if (out.iterations.back() == t - 1) {
        out.iterates.pop_back();
        out.iterations.pop_back();
      }
      if (out.iterations.back() != t - 2) {
        out.iterates.push_back(previous);
        out.iterations.push_back(t - 2);
      }
      out.final_profile = previous;
      return out;
    }
    previous = K;
    k -= eta * g;
    K = K.unflatten(k);
    if (t % record_every == 0 || t == steps) {
      out.iterates.push_back(K);
      out.iterations.push_back(t);
    }
  }
  // The last iterate has not been evaluated yet.
  try {
    w(K);
  } catch (const NotStabilizing&) {
    out.left_stabilizing_set = true;
    out.truncated_at = steps;
    out.iterates.pop_back();
    out.iterations.pop_back();
    if (out.iterations.empty() || out.iterations.back() != steps - 1) {
      out.iterates.push_back(previous);
      out.iterations.push_back(steps - 1);
    }
    K = previous;
  }
  out.final_profile = K;
  return out;
}

inline GradientPlayResult gradient_play(const LinearQuadraticGame& game,
                                        const FeedbackProfile& K0, double eta, long steps,
                                        long record_every = 1,
                                        const NumericsConfig& cfg = default_numerics()) {
  detail::stable_closed_loop(game, K0, cfg);
  return run_gradient_play([&](const FeedbackProfile& p) { return pseudo_gradient(game, p, cfg); },
                           K0, eta, steps, record_every);
}

}  // namespace magps
