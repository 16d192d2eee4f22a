#pragma once

// Local LQ-game approximations along nominal trajectories of a policy, and
// the guidance control obtained from their first Nash action.

#include <functional>
#include <string>
#include <vector>

#include "magps/envs.hpp"
#include "magps/finite_lq.hpp"

namespace magps {

class NonFiniteState : public Error {
 public:
  NonFiniteState(const std::string& what, int step) : Error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Deterministic joint state-feedback policy: state -> joint control.
using JointPolicy = std::function<Vector(const Vector&)>;

struct NominalTrajectory {
  std::vector<Vector> states;    // x_0 .. x_{T+1}
  std::vector<Vector> controls;  // u_0 .. u_T (joint)

  int horizon() const { return static_cast<int>(controls.size()) - 1; }
};

inline NominalTrajectory nominal_rollout(const Environment& env, const JointPolicy& policy,
                                         const Vector& x0, int T) {
  if (T < 1) throw Error("nominal_rollout: horizon must be at least 1");
  require(x0.size() == env.state_dim(), "nominal_rollout: state dimension mismatch");
  NominalTrajectory traj;
  traj.states.reserve(static_cast<std::size_t>(T) + 2);
  traj.controls.reserve(static_cast<std::size_t>(T) + 1);
  traj.states.push_back(x0);
  for (int t = 0; t <= T; ++t) {
    const Vector& x = traj.states.back();
    Vector u = policy(x);
    require(u.size() == env.total_control_dim(), "nominal_rollout: policy output dimension");
    Vector next = env.step(x, u);
    if (!u.allFinite() || !next.allFinite())
      throw NonFiniteState("nominal_rollout: non-finite state at step " + std::to_string(t + 1),
                           t + 1);
    traj.controls.push_back(std::move(u));
    traj.states.push_back(std::move(next));
  }
  return traj;
}

namespace detail {

/// Symmetric part of m with eigenvalues raised to at least `floor`.
inline Matrix floor_eigenvalues(const Matrix& m, double floor) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m));
  const Vector lifted = eig.eigenvalues().cwiseMax(floor);
  if (lifted == eig.eigenvalues()) return symmetrize(m);
  return symmetrize(eig.eigenvectors() * lifted.asDiagonal() * eig.eigenvectors().transpose());
}

}  // namespace detail

/// Local game in deviation coordinates (dx, du) around the trajectory.
///
/// The second-order expansion of c^i at (xb, ub) is
///   c + g' dx + 1/2 dx' H dx + ...
/// and matches the model dx' Q dx + 2 q' dx (+ the same for du) when
/// Q = H / 2 and q = g / 2; the constant is dropped. Q and R are then made
/// positive definite by flooring their eigenvalues, which leaves an already
/// positive definite quadratic model untouched.
inline FiniteHorizonLQGame linearize_quadraticize(const Environment& env,
                                                  const NominalTrajectory& traj,
                                                  const NumericsConfig& cfg = default_numerics()) {
  const int T = traj.horizon();
  require(T >= 0 && traj.states.size() == traj.controls.size() + 1,
          "linearize_quadraticize: malformed trajectory");
  const int N = env.agent_count();
  FiniteHorizonLQGame g;
  g.horizon = T;
  g.x0 = Vector::Zero(env.state_dim());
  for (int t = 0; t <= T; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    const Derivatives d = env.derivatives(traj.states[ut], traj.controls[ut]);
    g.A.push_back(d.fx);
    std::vector<Matrix> Bs, Qs, Rs;
    std::vector<Vector> qs, rs;
    for (int i = 0; i < N; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      Bs.push_back(d.fu.middleCols(env.control_offset(i), env.control_dim(i)));
      Qs.push_back(detail::floor_eigenvalues(0.5 * d.cxx[ui], cfg.state_cost_floor));
      qs.push_back(0.5 * d.cx[ui]);
      Rs.push_back(detail::floor_eigenvalues(0.5 * d.cuu[ui], cfg.control_cost_floor));
      rs.push_back(0.5 * d.cu[ui]);
    }
    g.B.push_back(std::move(Bs));
    g.Q.push_back(std::move(Qs));
    g.q.push_back(std::move(qs));
    g.R.push_back(std::move(Rs));
    g.r.push_back(std::move(rs));
  }
  return g;
}

struct GuidanceResult {
  Vector guidance;       // joint u_check_0
  Vector nominal;        // joint u_bar_0
  FiniteHorizonLQGame game;
  std::vector<int> degenerate_stages;
  std::vector<double> best_response_residuals;  // filled on request
  bool degraded = false;
  std::string failure;
};

struct GuidanceOptions {
  int horizon = 20;
  bool check_best_response = false;
  NumericsConfig numerics = default_numerics();
};

/// u_check_0 = u_bar_0 - k_0: the first Nash action of the local game at
/// deviation 0, shifted back to global coordinates. If the local solve
/// fails, the nominal action is returned with `degraded` set.
inline GuidanceResult guidance_control(const Environment& env, const JointPolicy& policy,
                                       const Vector& x0, const GuidanceOptions& opt = {}) {
  const NominalTrajectory traj = nominal_rollout(env, policy, x0, opt.horizon);
  GuidanceResult out;
  out.nominal = traj.controls.front();
  out.guidance = out.nominal;
  out.game = linearize_quadraticize(env, traj, opt.numerics);
  try {
    const FiniteNashResult nash = solve_finite_nash(out.game, opt.numerics);
    out.degenerate_stages = nash.degenerate_stages;
    Vector correction(env.total_control_dim());
    for (int i = 0; i < env.agent_count(); ++i)
      correction.segment(env.control_offset(i), env.control_dim(i)) =
          -nash.profile.k.front()[static_cast<std::size_t>(i)];
    if (!correction.allFinite()) throw Error("guidance_control: non-finite local solution");
    out.guidance = out.nominal + correction;
    if (opt.check_best_response) {
      for (int i = 0; i < env.agent_count(); ++i)
        out.best_response_residuals.push_back(best_response_residual(out.game, nash.profile, i));
    }
  } catch (const Error& e) {
    out.guidance = out.nominal;
    out.degraded = true;
    out.failure = e.what();
  }
  return out;
}

/// c^i(x, u) + rho ||u^i - u_check^i||^2 with the guidance held constant.
inline double guided_stage_cost(const Environment& env, int i, const Vector& x, const Vector& u,
                                const Vector& guidance, double rho) {
  if (!(rho >= 0.0)) throw Error("guided_stage_cost: rho must be nonnegative");
  require(guidance.size() == env.total_control_dim(), "guided_stage_cost: guidance dimension");
  const Vector dev = env.agent_control(u, i) - env.agent_control(guidance, i);
  return env.cost(i, x, u) + rho * dev.squaredNorm();
}

}  // namespace magps
