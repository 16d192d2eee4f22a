#pragma once

// Experiment environments: an LQ game wrapper, three-car unicycle platooning
// and six-player basketball formation. Every environment exposes its
// dynamics, per-agent stage costs and their analytic derivatives.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "magps/lq_game.hpp"

namespace magps {

class InvalidAgent : public Error {
 public:
  using Error::Error;
};

/// Derivatives of the dynamics and of every agent's stage cost at (x, u).
/// Cost derivatives with respect to controls cover the agent's own block.
struct Derivatives {
  Matrix fx;                  // n x n
  Matrix fu;                  // n x m (joint)
  std::vector<Vector> cx;     // [i] n
  std::vector<Matrix> cxx;    // [i] n x n
  std::vector<Vector> cu;     // [i] m_i
  std::vector<Matrix> cuu;    // [i] m_i x m_i
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int agent_count() const = 0;
  virtual int control_dim(int i) const = 0;

  /// Joint control vectors concatenate the agents' controls in agent order.
  virtual Vector step(const Vector& x, const Vector& u) const = 0;
  virtual double cost(int i, const Vector& x, const Vector& u) const = 0;

  virtual Matrix jacobian_x(const Vector& x, const Vector& u) const = 0;
  virtual Matrix jacobian_u(const Vector& x, const Vector& u) const = 0;
  virtual Vector cost_grad_x(int i, const Vector& x, const Vector& u) const = 0;
  virtual Matrix cost_hess_x(int i, const Vector& x, const Vector& u) const = 0;
  /// Gradient/Hessian with respect to agent i's own control block.
  virtual Vector cost_grad_u(int i, const Vector& x, const Vector& u) const = 0;
  virtual Matrix cost_hess_u(int i, const Vector& x, const Vector& u) const = 0;

  /// Deterministic in `seed`.
  virtual std::vector<Vector> sample_initial(std::uint64_t seed, int count) const = 0;

  int total_control_dim() const {
    int m = 0;
    for (int i = 0; i < agent_count(); ++i) m += control_dim(i);
    return m;
  }
  int control_offset(int i) const {
    int o = 0;
    for (int j = 0; j < i; ++j) o += control_dim(j);
    return o;
  }
  Vector agent_control(const Vector& u, int i) const {
    return u.segment(control_offset(i), control_dim(i));
  }
  Matrix jacobian_u_agent(const Vector& x, const Vector& u, int i) const {
    return jacobian_u(x, u).middleCols(control_offset(i), control_dim(i));
  }

  Derivatives derivatives(const Vector& x, const Vector& u) const {
    check_dims(x, u);
    Derivatives d;
    d.fx = jacobian_x(x, u);
    d.fu = jacobian_u(x, u);
    for (int i = 0; i < agent_count(); ++i) {
      d.cx.push_back(cost_grad_x(i, x, u));
      d.cxx.push_back(cost_hess_x(i, x, u));
      d.cu.push_back(cost_grad_u(i, x, u));
      d.cuu.push_back(cost_hess_u(i, x, u));
    }
    return d;
  }

 protected:
  void check_dims(const Vector& x, const Vector& u) const {
    require(x.size() == state_dim(), name() + ": state dimension mismatch");
    require(u.size() == total_control_dim(), name() + ": control dimension mismatch");
  }
  void check_agent_index(int i) const {
    if (i < 0 || i >= agent_count())
      throw InvalidAgent(name() + ": invalid agent index " + std::to_string(i));
  }
};

/// An infinite-horizon LQ game viewed as an environment with stage cost
/// c^i = x' Q^i x + u^i' R^i u^i.
class LqEnv final : public Environment {
 public:
  explicit LqEnv(LinearQuadraticGame game) : game_(std::move(game)) {
    game_.validate();
    for (int i = 0; i < game_.agent_count(); ++i) {
      offsets_.push_back(control_offset_of(i));
    }
    Bjoint_.resize(game_.state_dim(), game_.total_control_dim());
    for (int i = 0; i < game_.agent_count(); ++i)
      Bjoint_.middleCols(offsets_[static_cast<std::size_t>(i)], game_.control_dim(i)) =
          game_.B[static_cast<std::size_t>(i)];
  }

  const LinearQuadraticGame& game() const { return game_; }

  std::string name() const override { return "lq"; }
  int state_dim() const override { return game_.state_dim(); }
  int agent_count() const override { return game_.agent_count(); }
  int control_dim(int i) const override { return game_.control_dim(i); }

  Vector step(const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    return game_.A * x + Bjoint_ * u;
  }
  double cost(int i, const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    check_agent_index(i);
    const auto ui = static_cast<std::size_t>(i);
    const Vector ui_ctrl = agent_control(u, i);
    return x.dot(game_.Q[ui] * x) + ui_ctrl.dot(game_.R[ui] * ui_ctrl);
  }
  Matrix jacobian_x(const Vector&, const Vector&) const override { return game_.A; }
  Matrix jacobian_u(const Vector&, const Vector&) const override { return Bjoint_; }
  Vector cost_grad_x(int i, const Vector& x, const Vector&) const override {
    check_agent_index(i);
    return 2.0 * game_.Q[static_cast<std::size_t>(i)] * x;
  }
  Matrix cost_hess_x(int i, const Vector&, const Vector&) const override {
    check_agent_index(i);
    return 2.0 * game_.Q[static_cast<std::size_t>(i)];
  }
  Vector cost_grad_u(int i, const Vector&, const Vector& u) const override {
    check_agent_index(i);
    return 2.0 * game_.R[static_cast<std::size_t>(i)] * agent_control(u, i);
  }
  Matrix cost_hess_u(int i, const Vector&, const Vector&) const override {
    check_agent_index(i);
    return 2.0 * game_.R[static_cast<std::size_t>(i)];
  }

  /// Draws from the discrete initial distribution when the game has one,
  /// otherwise from a Gaussian with second moment sigma0.
  std::vector<Vector> sample_initial(std::uint64_t seed, int count) const override {
    std::mt19937_64 rng(seed);
    std::vector<Vector> out;
    if (!game_.initial_states.empty()) {
      // Systematic sampling: one uniform offset, evenly spaced quantiles.
      // Each support point appears count * p times up to rounding, so
      // sample averages track the distribution closely; order is shuffled.
      double total = 0.0;
      for (const auto& s : game_.initial_states) total += s.probability;
      const double offset = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      std::size_t idx = 0;
      double cdf = game_.initial_states.front().probability / total;
      for (int k = 0; k < count; ++k) {
        const double q = (k + offset) / count;
        while (q > cdf && idx + 1 < game_.initial_states.size())
          cdf += game_.initial_states[++idx].probability / total;
        out.push_back(game_.initial_states[idx].x);
      }
      std::shuffle(out.begin(), out.end(), rng);
    } else {
      const Matrix L = game_.sigma0.llt().matrixL();
      std::normal_distribution<double> normal(0.0, 1.0);
      for (int k = 0; k < count; ++k) {
        Vector z(state_dim());
        for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = normal(rng);
        out.push_back(L * z);
      }
    }
    return out;
  }

 private:
  int control_offset_of(int i) const {
    int o = 0;
    for (int j = 0; j < i; ++j) o += game_.control_dim(j);
    return o;
  }

  LinearQuadraticGame game_;
  std::vector<int> offsets_;
  Matrix Bjoint_;
};

/// Nominal initial joint state plus a uniform jitter radius applied to every
/// component.
struct InitialLayout {
  Vector nominal;
  double jitter = 0.1;

  std::vector<Vector> sample(std::uint64_t seed, int count) const {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-jitter, jitter);
    std::vector<Vector> out;
    for (int k = 0; k < count; ++k) {
      Vector x = nominal;
      for (Eigen::Index j = 0; j < x.size(); ++j) x(j) += u(rng);
      out.push_back(std::move(x));
    }
    return out;
  }
};

/// Three unicycles, state [p_x, p_y, v, theta] and control [a, omega] per car,
/// forward-Euler integration. Car 1 leads; cars 2 and 3 track its lateral
/// position while car 1 is charged for their distance to the target lane.
class PlatooningEnv final : public Environment {
 public:
  static constexpr int kAgents = 3;
  static constexpr double kTargetLane = 0.5;
  static constexpr double kTargetSpeed = 1.0;
  static constexpr double kTargetHeading = std::numbers::pi / 2.0;
  static constexpr double kLaneWeight = 5.0;

  explicit PlatooningEnv(double dt = 0.1, InitialLayout layout = default_layout())
      : dt_(dt), layout_(std::move(layout)) {
    require(layout_.nominal.size() == 12, "platooning: layout must have 12 entries");
  }

  /// Leader in the centre lane, followers one lane to either side.
  static InitialLayout default_layout() {
    InitialLayout l;
    l.nominal.resize(12);
    l.nominal << 0.5, 1.0, 1.0, kTargetHeading,   // car 1
                 0.0, 0.0, 1.0, kTargetHeading,   // car 2
                 1.0, 0.0, 1.0, kTargetHeading;   // car 3
    l.jitter = 0.1;
    return l;
  }

  double dt() const { return dt_; }
  const InitialLayout& layout() const { return layout_; }

  std::string name() const override { return "platooning"; }
  int state_dim() const override { return 12; }
  int agent_count() const override { return kAgents; }
  int control_dim(int) const override { return 2; }

  Vector step(const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    Vector next = x;
    for (int a = 0; a < kAgents; ++a) {
      const int s = 4 * a, c = 2 * a;
      const double v = x(s + 2), th = x(s + 3);
      next(s + 0) += dt_ * v * std::cos(th);
      next(s + 1) += dt_ * v * std::sin(th);
      next(s + 2) += dt_ * u(c + 0);
      next(s + 3) += dt_ * u(c + 1);
    }
    return next;
  }

  double cost(int i, const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    check_agent_index(i);
    const int s = 4 * i, c = 2 * i;
    double value = sq(x(s + 2) - kTargetSpeed) + sq(x(s + 3) - kTargetHeading) +
                   sq(u(c + 0)) + sq(u(c + 1));
    if (i == 0) {
      value += kLaneWeight * (sq(x(4) - kTargetLane) + sq(x(8) - kTargetLane));
    } else {
      value += kLaneWeight * sq(x(s) - x(0));
    }
    return value;
  }

  Matrix jacobian_x(const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    Matrix J = Matrix::Identity(12, 12);
    for (int a = 0; a < kAgents; ++a) {
      const int s = 4 * a;
      const double v = x(s + 2), th = x(s + 3);
      J(s + 0, s + 2) = dt_ * std::cos(th);
      J(s + 0, s + 3) = -dt_ * v * std::sin(th);
      J(s + 1, s + 2) = dt_ * std::sin(th);
      J(s + 1, s + 3) = dt_ * v * std::cos(th);
    }
    return J;
  }

  Matrix jacobian_u(const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    Matrix J = Matrix::Zero(12, 6);
    for (int a = 0; a < kAgents; ++a) {
      J(4 * a + 2, 2 * a + 0) = dt_;
      J(4 * a + 3, 2 * a + 1) = dt_;
    }
    return J;
  }

  Vector cost_grad_x(int i, const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    check_agent_index(i);
    const int s = 4 * i;
    Vector g = Vector::Zero(12);
    g(s + 2) = 2.0 * (x(s + 2) - kTargetSpeed);
    g(s + 3) = 2.0 * (x(s + 3) - kTargetHeading);
    if (i == 0) {
      g(4) += 2.0 * kLaneWeight * (x(4) - kTargetLane);
      g(8) += 2.0 * kLaneWeight * (x(8) - kTargetLane);
    } else {
      const double d = 2.0 * kLaneWeight * (x(s) - x(0));
      g(s) += d;
      g(0) -= d;
    }
    return g;
  }

  Matrix cost_hess_x(int i, const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    check_agent_index(i);
    const int s = 4 * i;
    Matrix H = Matrix::Zero(12, 12);
    H(s + 2, s + 2) = 2.0;
    H(s + 3, s + 3) = 2.0;
    const double w = 2.0 * kLaneWeight;
    if (i == 0) {
      H(4, 4) += w;
      H(8, 8) += w;
    } else {
      H(s, s) += w;
      H(0, 0) += w;
      H(s, 0) -= w;
      H(0, s) -= w;
    }
    return H;
  }

  Vector cost_grad_u(int i, const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    check_agent_index(i);
    return 2.0 * agent_control(u, i);
  }
  Matrix cost_hess_u(int i, const Vector&, const Vector&) const override {
    check_agent_index(i);
    return 2.0 * Matrix::Identity(2, 2);
  }

  std::vector<Vector> sample_initial(std::uint64_t seed, int count) const override {
    return layout_.sample(seed, count);
  }

 private:
  static double sq(double v) { return v * v; }

  double dt_;
  InitialLayout layout_;
};

/// Six double-integrator players, state [p_x, p_y, v_x, v_y] and control
/// [u_x, u_y] each. Players 1, 3, 5 (indices 0, 2, 4) attack: the center and
/// shooting guard hold rings of "radius" r_i (the cost reads
/// (p_x^2 + p_y^2 - r_i)^2) behind the baseline p_y <= 0, the forward screens
/// player 4. Defenders 2, 4, 6 track 0.75 times their opponent's position.
class BasketballEnv final : public Environment {
 public:
  static constexpr int kAgents = 6;
  static constexpr double kCenterRadius = 1.5;
  static constexpr double kGuardRadius = 4.0;
  static constexpr double kBaselinePenalty = 100.0;
  static constexpr double kDefenseRatio = 0.75;
  static constexpr double kKinkWidth = 1e-12;

  explicit BasketballEnv(double dt = 0.1, InitialLayout layout = default_layout())
      : dt_(dt), layout_(std::move(layout)) {
    require(layout_.nominal.size() == 24, "basketball: layout must have 24 entries");
  }

  /// Half-court positions (basket at the origin, court at p_y < 0), all at rest.
  static InitialLayout default_layout() {
    InitialLayout l;
    l.nominal.resize(24);
    l.nominal << -1.0, -1.5, 0.0, 0.0,   // 1 center
                  0.0, -2.0, 0.0, 0.0,   // 2 defends center
                  2.0, -2.5, 0.0, 0.0,   // 3 shooting guard
                  1.0, -3.5, 0.0, 0.0,   // 4 defends guard
                  0.0, -3.0, 0.0, 0.0,   // 5 forward
                 -1.0, -2.5, 0.0, 0.0;   // 6 defends forward
    l.jitter = 0.1;
    return l;
  }

  double dt() const { return dt_; }
  const InitialLayout& layout() const { return layout_; }

  static double ring_radius(int i) { return i == 0 ? kCenterRadius : kGuardRadius; }
  static bool is_ring_player(int i) { return i == 0 || i == 2; }
  static bool is_defender(int i) { return i % 2 == 1; }

  std::string name() const override { return "basketball"; }
  int state_dim() const override { return 24; }
  int agent_count() const override { return kAgents; }
  int control_dim(int) const override { return 2; }

  Vector step(const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    Vector next = x;
    for (int a = 0; a < kAgents; ++a) {
      const int s = 4 * a, c = 2 * a;
      next(s + 0) += dt_ * x(s + 2);
      next(s + 1) += dt_ * x(s + 3);
      next(s + 2) += dt_ * u(c + 0);
      next(s + 3) += dt_ * u(c + 1);
    }
    return next;
  }

  double cost(int i, const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    check_agent_index(i);
    const int s = 4 * i, c = 2 * i;
    double value = sq(u(c)) + sq(u(c + 1));
    if (is_ring_player(i)) {
      const double ring = sq(x(s)) + sq(x(s + 1)) - ring_radius(i);
      value += sq(ring) + sq(x(s + 2)) + sq(x(s + 3)) +
               kBaselinePenalty * std::max(x(s + 1), 0.0);
    } else {
      const int o = 4 * (i - 1);
      const double ratio = i == 4 ? 1.0 : kDefenseRatio;
      value += sq(x(s) - ratio * x(o)) + sq(x(s + 1) - ratio * x(o + 1));
    }
    return value;
  }

  Matrix jacobian_x(const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    Matrix J = Matrix::Identity(24, 24);
    for (int a = 0; a < kAgents; ++a) {
      J(4 * a + 0, 4 * a + 2) = dt_;
      J(4 * a + 1, 4 * a + 3) = dt_;
    }
    return J;
  }

  Matrix jacobian_u(const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    Matrix J = Matrix::Zero(24, 12);
    for (int a = 0; a < kAgents; ++a) {
      J(4 * a + 2, 2 * a + 0) = dt_;
      J(4 * a + 3, 2 * a + 1) = dt_;
    }
    return J;
  }

  /// The baseline term contributes the subgradient 0 at the kink.
  Vector cost_grad_x(int i, const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    check_agent_index(i);
    const int s = 4 * i;
    Vector g = Vector::Zero(24);
    if (is_ring_player(i)) {
      const double px = x(s), py = x(s + 1);
      const double ring = px * px + py * py - ring_radius(i);
      g(s) = 4.0 * ring * px;
      g(s + 1) = 4.0 * ring * py;
      g(s + 2) = 2.0 * x(s + 2);
      g(s + 3) = 2.0 * x(s + 3);
      if (py > kKinkWidth) g(s + 1) += kBaselinePenalty;
    } else {
      const int o = 4 * (i - 1);
      const double ratio = i == 4 ? 1.0 : kDefenseRatio;
      for (int k = 0; k < 2; ++k) {
        const double d = 2.0 * (x(s + k) - ratio * x(o + k));
        g(s + k) += d;
        g(o + k) -= ratio * d;
      }
    }
    return g;
  }

  /// The baseline term is piecewise linear and adds nothing.
  Matrix cost_hess_x(int i, const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    check_agent_index(i);
    const int s = 4 * i;
    Matrix H = Matrix::Zero(24, 24);
    if (is_ring_player(i)) {
      const double px = x(s), py = x(s + 1);
      const double ring = px * px + py * py - ring_radius(i);
      H(s, s) = 8.0 * px * px + 4.0 * ring;
      H(s + 1, s + 1) = 8.0 * py * py + 4.0 * ring;
      H(s, s + 1) = H(s + 1, s) = 8.0 * px * py;
      H(s + 2, s + 2) = 2.0;
      H(s + 3, s + 3) = 2.0;
    } else {
      const int o = 4 * (i - 1);
      const double ratio = i == 4 ? 1.0 : kDefenseRatio;
      for (int k = 0; k < 2; ++k) {
        H(s + k, s + k) += 2.0;
        H(o + k, o + k) += 2.0 * ratio * ratio;
        H(s + k, o + k) -= 2.0 * ratio;
        H(o + k, s + k) -= 2.0 * ratio;
      }
    }
    return H;
  }

  Vector cost_grad_u(int i, const Vector& x, const Vector& u) const override {
    check_dims(x, u);
    check_agent_index(i);
    return 2.0 * agent_control(u, i);
  }
  Matrix cost_hess_u(int i, const Vector&, const Vector&) const override {
    check_agent_index(i);
    return 2.0 * Matrix::Identity(2, 2);
  }

  std::vector<Vector> sample_initial(std::uint64_t seed, int count) const override {
    return layout_.sample(seed, count);
  }

  /// |p_x^2 + p_y^2 - r_i| for the two ring players.
  static double radial_error(const Vector& x, int i) {
    const int s = 4 * i;
    return std::abs(x(s) * x(s) + x(s + 1) * x(s + 1) - ring_radius(i));
  }
  /// Distance of a defender to 0.75 times its opponent's position.
  static double tracking_error(const Vector& x, int i) {
    const int s = 4 * i, o = 4 * (i - 1);
    return std::hypot(x(s) - kDefenseRatio * x(o), x(s + 1) - kDefenseRatio * x(o + 1));
  }

 private:
  static double sq(double v) { return v * v; }

  double dt_;
  InitialLayout layout_;
};

}  // namespace magps
