#include <catch_amalgamated.hpp>

#include "lq_fixtures.hpp"
#include "magps/finite_lq.hpp"
#include "support.hpp"

using namespace magps;

namespace {

FiniteHorizonLQGame random_finite_game(std::mt19937_64& rng, int n, const std::vector<int>& m, int T) {
  FiniteHorizonLQGame g;
  g.horizon = T;
  g.x0 = support::random_vector(rng, n);
  for (int t = 0; t <= T; ++t) {
    Matrix A = support::random_matrix(rng, n, n);
    g.A.push_back(A * (1.05 / std::max(1e-3, spectral_radius(A))));
    std::vector<Matrix> Bs, Qs, Rs;
    std::vector<Vector> qs, rs;
    for (int mi : m) {
      Bs.push_back(support::random_matrix(rng, n, mi, 0.5));
      Qs.push_back(support::random_spd(rng, n, 0.0) / n);
      qs.push_back(support::random_vector(rng, n, 0.3));
      Rs.push_back(support::random_spd(rng, mi, 0.5));
      rs.push_back(support::random_vector(rng, mi, 0.3));
    }
    g.B.push_back(Bs);
    g.Q.push_back(Qs);
    g.q.push_back(qs);
    g.R.push_back(Rs);
    g.r.push_back(rs);
  }
  return g;
}

Matrix riccati_gain(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R) {
  Matrix P = Q;
  for (int k = 0; k < 100000; ++k) {
    const Matrix G = (R + B.transpose() * P * B).inverse() * B.transpose() * P * A;
    const Matrix next = Q + A.transpose() * P * A - A.transpose() * P * B * G;
    const bool done = (next - P).norm() < 1e-15;
    P = next;
    if (done) break;
  }
  return (R + B.transpose() * P * B).inverse() * B.transpose() * P * A;
}

}  // namespace

TEST_CASE("finite nash: random instances pass the best-response check") {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> n_dist(1, 6), N_dist(1, 3), m_dist(1, 2), T_dist(0, 30);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> m(static_cast<std::size_t>(N_dist(rng)));
    for (auto& mi : m) mi = m_dist(rng);
    const auto g = random_finite_game(rng, n_dist(rng), m, T_dist(rng));
    const auto sol = solve_finite_nash(g);
    CHECK(sol.degenerate_stages.empty());
    for (int i = 0; i < g.agent_count(); ++i) CHECK(best_response_residual(g, sol.profile, i) <= 1e-7);
  }
}

TEST_CASE("finite nash: long horizon single agent recovers the LQR gain") {
  std::mt19937_64 rng(42);
  LinearQuadraticGame inf;
  inf.A = support::random_matrix(rng, 3, 3);
  inf.A *= 1.1 / spectral_radius(inf.A);
  inf.B = {support::random_matrix(rng, 3, 1)};
  inf.Q = {support::random_spd(rng, 3)};
  inf.R = {Matrix::Identity(1, 1)};
  inf.sigma0 = Matrix::Identity(3, 3);
  const auto g = FiniteHorizonLQGame::lift(inf, 200, Vector::Ones(3));
  const auto sol = solve_finite_nash(g);
  const Matrix oracle = riccati_gain(inf.A, inf.B[0], inf.Q[0], inf.R[0]);
  CHECK((sol.profile.K[0][0] - oracle).norm() <= 1e-3);
  CHECK(sol.profile.k[0][0].norm() <= 1e-12);
}

TEST_CASE("finite nash: one-shot game in u only") {
  FiniteHorizonLQGame g;
  g.horizon = 0;
  g.x0 = Vector::Zero(2);
  g.A = {Matrix::Identity(2, 2)};
  g.B = {{Matrix::Zero(2, 1), Matrix::Zero(2, 2)}};
  g.Q = {{Matrix::Identity(2, 2), Matrix::Identity(2, 2)}};
  g.q = {{Vector::Zero(2), Vector::Zero(2)}};
  Matrix R2(2, 2);
  R2 << 2.0, 0.5, 0.5, 1.0;
  g.R = {{Matrix::Constant(1, 1, 4.0), R2}};
  Vector r1(1), r2(2);
  r1 << 2.0;
  r2 << 1.0, -1.0;
  g.r = {{r1, r2}};
  const auto sol = solve_finite_nash(g);
  CHECK((sol.profile.control(0, 0, g.x0) + g.R[0][0].inverse() * r1).norm() <= 1e-14);
  CHECK((sol.profile.control(0, 1, g.x0) + R2.inverse() * r2).norm() <= 1e-14);
}

// On the reference game the backward recursion settles into a period-2 cycle
// instead; that case is tracked by the acceptance suite.
TEST_CASE("finite nash: lifted two-agent game approaches the infinite-horizon equilibrium") {
  auto inf = reference_game();
  inf.Q[1](1, 1) = 1.0;
  const auto nash = solve_nash(inf).profile;
  double previous = std::numeric_limits<double>::infinity();
  for (int T : {50, 100, 200}) {
    const auto sol = solve_finite_nash(FiniteHorizonLQGame::lift(inf, T, inf.initial_states[0].x));
    const double d = std::hypot((sol.profile.K[0][0] - nash[0]).norm(),
                                (sol.profile.K[0][1] - nash[1]).norm());
    CHECK(d <= previous);
    previous = d;
  }
  CHECK(previous <= 1e-3);
}

TEST_CASE("finite nash: scaling one agent's costs leaves the equilibrium unchanged") {
  std::mt19937_64 rng(43);
  const auto g = random_finite_game(rng, 4, {1, 2}, 10);
  auto h = g;
  for (int t = 0; t <= g.horizon; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    h.Q[ut][1] *= 3.5;
    h.q[ut][1] *= 3.5;
    h.R[ut][1] *= 3.5;
    h.r[ut][1] *= 3.5;
  }
  const auto a = solve_finite_nash(g).profile, b = solve_finite_nash(h).profile;
  for (int t = 0; t <= g.horizon; ++t)
    for (std::size_t i = 0; i < 2; ++i) {
      const auto ut = static_cast<std::size_t>(t);
      CHECK((a.K[ut][i] - b.K[ut][i]).norm() <= 1e-9);
      CHECK((a.k[ut][i] - b.k[ut][i]).norm() <= 1e-9);
    }
}

TEST_CASE("finite nash: singular stage takes the min-norm branch") {
  // Two scalar agents; at stage 0 the coupled matrix [[1+q1, q1], [q2, 1+q2]]
  // with q1 = q2 = -0.5 is singular.
  FiniteHorizonLQGame g;
  g.horizon = 1;
  g.x0 = Vector::Ones(1);
  const Matrix one = Matrix::Ones(1, 1);
  for (int t = 0; t <= 1; ++t) {
    g.A.push_back(one);
    g.B.push_back({one, one});
    const double qv = t == 1 ? -0.5 : 1.0;
    g.Q.push_back({qv * one, qv * one});
    g.q.push_back({Vector::Zero(1), Vector::Zero(1)});
    g.R.push_back({one, one});
    g.r.push_back({Vector::Constant(1, 0.2), Vector::Constant(1, -0.1)});
  }
  const auto sol = solve_finite_nash(g);
  REQUIRE(sol.degenerate_stages == std::vector<int>{0});

  // Stage 1 sees a zero terminal value, so K_1 = 0, k_1 = r, Z_1 = Q_1 = -0.5
  // and z_1 = 0. Hand-build the stage-0 system [S | Y].
  Matrix S(2, 2);
  S << 0.5, -0.5, -0.5, 0.5;
  Matrix Y(2, 2);
  Y << -0.5, 0.2, -0.5, -0.1;
  Eigen::JacobiSVD<Matrix> svd(S, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix Sinv = Matrix::Zero(2, 2);
  Sinv(0, 0) = 1.0 / svd.singularValues()(0);
  const Matrix X = svd.matrixV() * Sinv * svd.matrixU().transpose() * Y;
  CHECK(std::abs(sol.profile.K[0][0](0, 0) - X(0, 0)) <= 1e-12);
  CHECK(std::abs(sol.profile.K[0][1](0, 0) - X(1, 0)) <= 1e-12);
  CHECK(std::abs(sol.profile.k[0][0](0) - X(0, 1)) <= 1e-12);
  CHECK(std::abs(sol.profile.k[0][1](0) - X(1, 1)) <= 1e-12);
}

TEST_CASE("finite nash: forcing the min-norm branch on regular stages changes nothing") {
  std::mt19937_64 rng(44);
  const auto g = random_finite_game(rng, 3, {1, 1}, 5);
  NumericsConfig always = default_numerics();
  always.degenerate_condition = 0.0;
  const auto a = solve_finite_nash(g);
  const auto b = solve_finite_nash(g, always);
  CHECK(b.degenerate_stages.size() == 6);
  for (int t = 0; t <= 5; ++t)
    for (std::size_t i = 0; i < 2; ++i)
      CHECK((a.profile.K[static_cast<std::size_t>(t)][i] - b.profile.K[static_cast<std::size_t>(t)][i]).norm() <= 1e-9);
}

TEST_CASE("best response residual") {
  std::mt19937_64 rng(45);
  const auto g = random_finite_game(rng, 3, {2}, 8);
  const auto sol = solve_finite_nash(g);
  CHECK(best_response_residual(g, sol.profile, 0) <= 1e-12);
  auto bumped = sol.profile;
  bumped.K[3][0].array() += 0.1;
  CHECK(best_response_residual(g, bumped, 0) >= 0.09);
}

TEST_CASE("rollout: zero game stays at zero") {
  FiniteHorizonLQGame g;
  g.horizon = 3;
  g.x0 = Vector::Zero(2);
  for (int t = 0; t <= 3; ++t) {
    g.A.push_back(Matrix::Identity(2, 2));
    g.B.push_back({Matrix::Ones(2, 1)});
    g.Q.push_back({Matrix::Identity(2, 2)});
    g.q.push_back({Vector::Zero(2)});
    g.R.push_back({Matrix::Identity(1, 1)});
    g.r.push_back({Vector::Zero(1)});
  }
  AffineStrategyProfile p;
  p.K.assign(4, {Matrix::Zero(1, 2)});
  p.k.assign(4, {Vector::Zero(1)});
  const auto ro = rollout_finite(g, p);
  for (const auto& x : ro.states) CHECK(x.norm() == 0.0);
  CHECK(ro.costs[0] == 0.0);
}

TEST_CASE("rollout: scalar two-stage hand example") {
  // x0 = 1, a = 2, b = 1, q = 1, qlin = 0.5, r = 1, rlin = 0.25, u = -0.5 x - 0.1.
  FiniteHorizonLQGame g;
  g.horizon = 1;
  g.x0 = Vector::Ones(1);
  for (int t = 0; t <= 1; ++t) {
    g.A.push_back(Matrix::Constant(1, 1, 2.0));
    g.B.push_back({Matrix::Ones(1, 1)});
    g.Q.push_back({Matrix::Ones(1, 1)});
    g.q.push_back({Vector::Constant(1, 0.5)});
    g.R.push_back({Matrix::Ones(1, 1)});
    g.r.push_back({Vector::Constant(1, 0.25)});
  }
  AffineStrategyProfile p;
  p.K.assign(2, {Matrix::Constant(1, 1, 0.5)});
  p.k.assign(2, {Vector::Constant(1, 0.1)});
  const auto ro = rollout_finite(g, p);
  // t0: x = 1, u = -0.6, cost 1 + 1 + 0.36 - 0.3 = 2.06, x1 = 2 - 0.6 = 1.4
  // t1: x = 1.4, u = -0.8, cost 1.96 + 1.4 + 0.64 - 0.4 = 3.6, x2 = 2.8 - 0.8 = 2.0
  CHECK(ro.states[1](0) == Catch::Approx(1.4));
  CHECK(ro.states[2](0) == Catch::Approx(2.0));
  CHECK(ro.costs[0] == Catch::Approx(2.06 + 3.6).epsilon(1e-12));
}

TEST_CASE("rollout: nash cost beats unilateral deviations") {
  std::mt19937_64 rng(46);
  const auto g = random_finite_game(rng, 3, {1, 2}, 12);
  const auto sol = solve_finite_nash(g);
  const auto base = rollout_finite(g, sol.profile);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (int trial = 0; trial < 10; ++trial)
    for (std::size_t i = 0; i < 2; ++i) {
      auto p = sol.profile;
      for (auto& stage : p.k)
        for (Eigen::Index c = 0; c < stage[i].size(); ++c) stage[i](c) += noise(rng);
      for (auto& stage : p.K)
        for (Eigen::Index c = 0; c < stage[i].size(); ++c) stage[i].data()[c] += noise(rng);
      CHECK(rollout_finite(g, p).costs[i] >= base.costs[i] - 1e-10);
    }
}

TEST_CASE("rollout: realized cost equals direct summation") {
  std::mt19937_64 rng(47);
  const auto g = random_finite_game(rng, 4, {2, 1}, 7);
  const auto sol = solve_finite_nash(g);
  const auto ro = rollout_finite(g, sol.profile);
  for (std::size_t i = 0; i < 2; ++i) {
    double direct = 0.0;
    for (std::size_t t = 0; t <= 7; ++t) {
      const Vector& x = ro.states[t];
      const Vector& u = ro.controls[t][i];
      direct += x.dot(g.Q[t][i] * x) + 2.0 * g.q[t][i].dot(x) + u.dot(g.R[t][i] * u) +
                2.0 * g.r[t][i].dot(u);
    }
    CHECK(std::abs(direct - ro.costs[i]) <= 1e-10 * std::max(1.0, std::abs(direct)));
  }
}
