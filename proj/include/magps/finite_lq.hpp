#pragma once

// Finite-horizon, time-varying affine-quadratic games
//
//   min_{u^i}  sum_{t=0}^{T} x_t' Q_t^i x_t + 2 q_t^i' x_t + u_t^i' R_t^i u_t^i + 2 r_t^i' u_t^i
//   s.t.       x_{t+1} = A_t x_t + sum_i B_t^i u_t^i,   x_0 given,
//
// solved for feedback Nash strategies u_t^i = -K_t^i x_t - k_t^i by the
// coupled backward Riccati recursion.

#include <string>
#include <vector>

#include "magps/lq_game.hpp"

namespace magps {

struct FiniteHorizonLQGame {
  int horizon = 0;                       // T; stages are 0..T
  std::vector<Matrix> A;                 // [t]
  std::vector<std::vector<Matrix>> B;    // [t][i]
  std::vector<std::vector<Matrix>> Q;    // [t][i]
  std::vector<std::vector<Vector>> q;    // [t][i]
  std::vector<std::vector<Matrix>> R;    // [t][i]
  std::vector<std::vector<Vector>> r;    // [t][i]
  Vector x0;

  int stage_count() const { return horizon + 1; }
  int agent_count() const { return B.empty() ? 0 : static_cast<int>(B.front().size()); }
  int state_dim() const { return static_cast<int>(x0.size()); }
  int control_dim(int i) const {
    return static_cast<int>(B.front()[static_cast<std::size_t>(i)].cols());
  }
  int total_control_dim() const {
    int m = 0;
    for (int i = 0; i < agent_count(); ++i) m += control_dim(i);
    return m;
  }

  void validate() const {
    const auto stages = static_cast<std::size_t>(stage_count());
    require(horizon >= 0, "finite game: horizon must be nonnegative");
    require(A.size() == stages && B.size() == stages && Q.size() == stages &&
                q.size() == stages && R.size() == stages && r.size() == stages,
            "finite game: every stage list must have T+1 entries");
    const auto n = x0.size();
    const int N = agent_count();
    require(N > 0, "finite game: at least one agent required");
    for (std::size_t t = 0; t < stages; ++t) {
      require(A[t].rows() == n && A[t].cols() == n, "finite game: A_t must be n x n");
      require(static_cast<int>(B[t].size()) == N && static_cast<int>(Q[t].size()) == N &&
                  static_cast<int>(q[t].size()) == N && static_cast<int>(R[t].size()) == N &&
                  static_cast<int>(r[t].size()) == N,
              "finite game: per-agent lists must have N entries at every stage");
      for (int i = 0; i < N; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const auto m = control_dim(i);
        require(B[t][ui].rows() == n && B[t][ui].cols() == m, "finite game: B_t^i must be n x m_i");
        require(Q[t][ui].rows() == n && Q[t][ui].cols() == n, "finite game: Q_t^i must be n x n");
        require(q[t][ui].size() == n, "finite game: q_t^i must have length n");
        require(R[t][ui].rows() == m && R[t][ui].cols() == m, "finite game: R_t^i must be m_i x m_i");
        require(r[t][ui].size() == m, "finite game: r_t^i must have length m_i");
      }
    }
  }

  /// Time-invariant lift of an infinite-horizon game, zero affine terms.
  static FiniteHorizonLQGame lift(const LinearQuadraticGame& g, int T, const Vector& x0) {
    FiniteHorizonLQGame f;
    f.horizon = T;
    f.x0 = x0;
    const int N = g.agent_count();
    for (int t = 0; t <= T; ++t) {
      f.A.push_back(g.A);
      f.B.push_back(g.B);
      f.Q.push_back(g.Q);
      f.R.push_back(g.R);
      std::vector<Vector> qs, rs;
      for (int i = 0; i < N; ++i) {
        qs.push_back(Vector::Zero(g.state_dim()));
        rs.push_back(Vector::Zero(g.control_dim(i)));
      }
      f.q.push_back(qs);
      f.r.push_back(rs);
    }
    return f;
  }
};

/// Stage-wise affine feedback u_t^i = -K_t^i x_t - k_t^i.
struct AffineStrategyProfile {
  std::vector<std::vector<Matrix>> K;  // [t][i]
  std::vector<std::vector<Vector>> k;  // [t][i]

  int stage_count() const { return static_cast<int>(K.size()); }

  Vector control(int t, int i, const Vector& x) const {
    const auto ut = static_cast<std::size_t>(t), ui = static_cast<std::size_t>(i);
    return -K[ut][ui] * x - k[ut][ui];
  }
};

struct FiniteNashResult {
  AffineStrategyProfile profile;
  // Stages whose coupled system was ill-conditioned and solved by min-norm.
  std::vector<int> degenerate_stages;
};

namespace detail {

inline std::vector<Eigen::Index> control_offsets(const FiniteHorizonLQGame& g) {
  std::vector<Eigen::Index> off{0};
  for (int i = 0; i < g.agent_count(); ++i) off.push_back(off.back() + g.control_dim(i));
  return off;
}

}  // namespace detail

/// Feedback Nash strategies by backward recursion on per-agent quadratic
/// values V_t^i(x) = x' Z_t^i x + 2 z_t^i' x + const, with Z_{T+1} = 0.
///
/// At each stage all agents' first-order conditions
///   R^i K^i + B^i' Z^i sum_j B^j K^j = B^i' Z^i A
///   R^i k^i + B^i' Z^i sum_j B^j k^j = B^i' z^i + r^i
/// are stacked into one system S [K | k] = Y. When S is ill-conditioned the
/// minimum-norm least-squares solution is used and the stage is reported.
inline FiniteNashResult solve_finite_nash(const FiniteHorizonLQGame& g,
                                          const NumericsConfig& cfg = default_numerics()) {
  g.validate();
  const int N = g.agent_count();
  const auto n = static_cast<Eigen::Index>(g.state_dim());
  const auto off = detail::control_offsets(g);
  const Eigen::Index m = off.back();
  const auto stages = static_cast<std::size_t>(g.stage_count());

  FiniteNashResult out;
  out.profile.K.assign(stages, std::vector<Matrix>(static_cast<std::size_t>(N)));
  out.profile.k.assign(stages, std::vector<Vector>(static_cast<std::size_t>(N)));

  std::vector<Matrix> Z(static_cast<std::size_t>(N), Matrix::Zero(n, n));
  std::vector<Vector> z(static_cast<std::size_t>(N), Vector::Zero(n));
  Matrix S(m, m);
  Matrix Y(m, n + 1);

  for (int t = g.horizon; t >= 0; --t) {
    const auto ut = static_cast<std::size_t>(t);
    const Matrix& A = g.A[ut];
    for (int i = 0; i < N; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const Matrix BtZ = g.B[ut][ui].transpose() * Z[ui];
      const auto rows = off[ui + 1] - off[ui];
      for (int j = 0; j < N; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        S.block(off[ui], off[uj], rows, off[uj + 1] - off[uj]) = BtZ * g.B[ut][uj];
      }
      S.block(off[ui], off[ui], rows, rows) += g.R[ut][ui];
      Y.block(off[ui], 0, rows, n) = BtZ * A;
      Y.block(off[ui], n, rows, 1) = g.B[ut][ui].transpose() * z[ui] + g.r[ut][ui];
    }

    Matrix X;
    Eigen::PartialPivLU<Matrix> lu(S);
    const double rcond = lu.rcond();
    if (!(rcond > 0.0) || 1.0 / rcond > cfg.degenerate_condition) {
      X = least_squares_min_norm(S, Y);
      out.degenerate_stages.push_back(t);
    } else {
      X = lu.solve(Y);
    }

    Matrix F = A;
    Vector beta = Vector::Zero(n);
    for (int i = 0; i < N; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const auto rows = off[ui + 1] - off[ui];
      out.profile.K[ut][ui] = X.block(off[ui], 0, rows, n);
      out.profile.k[ut][ui] = X.block(off[ui], n, rows, 1);
      F -= g.B[ut][ui] * out.profile.K[ut][ui];
      beta -= g.B[ut][ui] * out.profile.k[ut][ui];
    }
    for (int i = 0; i < N; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const Matrix& Ki = out.profile.K[ut][ui];
      const Vector& ki = out.profile.k[ut][ui];
      const Matrix& Ri = g.R[ut][ui];
      const Vector zi = g.q[ut][ui] + Ki.transpose() * (Ri * ki - g.r[ut][ui]) +
                        F.transpose() * (Z[ui] * beta + z[ui]);
      const Matrix Zi = g.Q[ut][ui] + Ki.transpose() * Ri * Ki + F.transpose() * Z[ui] * F;
      Z[ui] = symmetrize(Zi);
      z[ui] = zi;
    }
  }
  return out;
}

inline void check_profile(const FiniteHorizonLQGame& g, const AffineStrategyProfile& p) {
  require(p.stage_count() == g.stage_count() && p.k.size() == p.K.size(),
          "affine profile: stage count must be T+1");
  for (int t = 0; t < g.stage_count(); ++t) {
    const auto ut = static_cast<std::size_t>(t);
    require(static_cast<int>(p.K[ut].size()) == g.agent_count() &&
                static_cast<int>(p.k[ut].size()) == g.agent_count(),
            "affine profile: one strategy per agent per stage");
    for (int i = 0; i < g.agent_count(); ++i) {
      const auto ui = static_cast<std::size_t>(i);
      require(p.K[ut][ui].rows() == g.control_dim(i) && p.K[ut][ui].cols() == g.state_dim() &&
                  p.k[ut][ui].size() == g.control_dim(i),
              "affine profile: strategy shape mismatch");
    }
  }
}

/// Exact best response of agent i (time-varying affine LQR) when every other
/// agent is fixed to its strategy in `p`.
inline AffineStrategyProfile best_response(const FiniteHorizonLQGame& g,
                                           const AffineStrategyProfile& p, int i) {
  g.validate();
  check_profile(g, p);
  if (i < 0 || i >= g.agent_count()) throw Error("best_response: invalid agent index");
  const auto ui = static_cast<std::size_t>(i);
  const auto n = static_cast<Eigen::Index>(g.state_dim());

  AffineStrategyProfile br = p;
  Matrix Z = Matrix::Zero(n, n);
  Vector z = Vector::Zero(n);
  for (int t = g.horizon; t >= 0; --t) {
    const auto ut = static_cast<std::size_t>(t);
    // Dynamics seen by agent i: x+ = At x + B u + c.
    Matrix At = g.A[ut];
    Vector c = Vector::Zero(n);
    for (int j = 0; j < g.agent_count(); ++j) {
      if (j == i) continue;
      const auto uj = static_cast<std::size_t>(j);
      At -= g.B[ut][uj] * p.K[ut][uj];
      c -= g.B[ut][uj] * p.k[ut][uj];
    }
    const Matrix& B = g.B[ut][ui];
    const Matrix& R = g.R[ut][ui];
    const Matrix H = R + B.transpose() * Z * B;
    const Eigen::LDLT<Matrix> ldlt(H);
    const Matrix K = ldlt.solve(B.transpose() * Z * At);
    const Vector k = ldlt.solve(B.transpose() * (Z * c + z) + g.r[ut][ui]);
    const Matrix F = At - B * K;
    const Vector beta = c - B * k;
    z = g.q[ut][ui] + K.transpose() * (R * k - g.r[ut][ui]) + F.transpose() * (Z * beta + z);
    Z = symmetrize(g.Q[ut][ui] + K.transpose() * R * K + F.transpose() * Z * F);
    br.K[ut][ui] = K;
    br.k[ut][ui] = k;
  }
  return br;
}

/// Max over stages of ||(K_t^i, k_t^i) - best response||_F.
inline double best_response_residual(const FiniteHorizonLQGame& g, const AffineStrategyProfile& p,
                                     int i) {
  const auto br = best_response(g, p, i);
  const auto ui = static_cast<std::size_t>(i);
  double worst = 0.0;
  for (int t = 0; t < g.stage_count(); ++t) {
    const auto ut = static_cast<std::size_t>(t);
    const double dK = (p.K[ut][ui] - br.K[ut][ui]).squaredNorm();
    const double dk = (p.k[ut][ui] - br.k[ut][ui]).squaredNorm();
    worst = std::max(worst, std::sqrt(dK + dk));
  }
  return worst;
}

struct FiniteRollout {
  std::vector<Vector> states;                 // x_0 .. x_{T+1}
  std::vector<std::vector<Vector>> controls;  // [t][i], t = 0..T
  std::vector<double> costs;                  // per agent
};

inline FiniteRollout rollout_finite(const FiniteHorizonLQGame& g, const AffineStrategyProfile& p) {
  g.validate();
  check_profile(g, p);
  const int N = g.agent_count();
  FiniteRollout out;
  out.costs.assign(static_cast<std::size_t>(N), 0.0);
  Vector x = g.x0;
  out.states.push_back(x);
  for (int t = 0; t < g.stage_count(); ++t) {
    const auto ut = static_cast<std::size_t>(t);
    std::vector<Vector> us;
    Vector next = g.A[ut] * x;
    for (int i = 0; i < N; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const Vector u = p.control(t, i, x);
      out.costs[ui] += x.dot(g.Q[ut][ui] * x) + 2.0 * g.q[ut][ui].dot(x) +
                       u.dot(g.R[ut][ui] * u) + 2.0 * g.r[ut][ui].dot(u);
      next += g.B[ut][ui] * u;
      us.push_back(u);
    }
    out.controls.push_back(std::move(us));
    x = next;
    out.states.push_back(x);
  }
  return out;
}

}  // namespace magps
