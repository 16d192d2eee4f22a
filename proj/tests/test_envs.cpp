#include <catch_amalgamated.hpp>

#include <memory>
#include <set>

#include "magps/envs.hpp"
#include "support.hpp"

using namespace magps;

namespace {

constexpr double kStep = 1e-6;

double scaled_err(const Matrix& analytic, const Matrix& fd) {
  return (analytic - fd).norm() / std::max(1.0, analytic.norm());
}

Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& at) {
  const Vector f0 = f(at);
  Matrix J(f0.size(), at.size());
  for (Eigen::Index c = 0; c < at.size(); ++c) {
    Vector p = at, m = at;
    p(c) += kStep;
    m(c) -= kStep;
    J.col(c) = (f(p) - f(m)) / (2.0 * kStep);
  }
  return J;
}

Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& at) {
  return fd_jacobian([&](const Vector& v) { return Vector::Constant(1, f(v)); }, at).row(0).transpose();
}

std::vector<std::unique_ptr<Environment>> all_envs() {
  std::vector<std::unique_ptr<Environment>> envs;
  envs.push_back(std::make_unique<LqEnv>(reference_game()));
  envs.push_back(std::make_unique<PlatooningEnv>());
  envs.push_back(std::make_unique<BasketballEnv>());
  return envs;
}

// Random point near the default layout, away from the baseline kink.
std::pair<Vector, Vector> smooth_point(const Environment& env, std::mt19937_64& rng) {
  Vector x = env.sample_initial(rng(), 1).front() + support::random_vector(rng, env.state_dim(), 0.5);
  if (env.name() == "basketball")
    for (int i : {0, 2})
      if (std::abs(x(4 * i + 1)) < 1e-3) x(4 * i + 1) = -0.5;
  return {x, support::random_vector(rng, env.total_control_dim())};
}

}  // namespace

TEST_CASE("step examples") {
  PlatooningEnv car;
  Vector x = Vector::Zero(12), u = Vector::Zero(6);
  x.segment(0, 4) << 1.0, 2.0, 0.0, 0.3;
  CHECK((car.step(x, u) - x).norm() == 0.0);

  LqEnv lq(reference_game());
  const Vector next = lq.step(Vector::Ones(2), Vector::Zero(2));
  CHECK(next(0) == Catch::Approx(0.616));
  CHECK(next(1) == Catch::Approx(0.626));

  BasketballEnv court;
  Vector b = Vector::Zero(24);
  b(2) = 1.0;
  const Vector bn = court.step(b, Vector::Zero(12));
  CHECK(bn(0) == Catch::Approx(0.1));
  CHECK(bn(1) == 0.0);
  CHECK(bn(2) == 1.0);
  CHECK(bn(3) == 0.0);

  CHECK_THROWS_AS(lq.step(Vector::Ones(3), Vector::Zero(2)), DimensionMismatch);
}

TEST_CASE("unicycle Euler update") {
  PlatooningEnv car(0.1);
  Vector x = Vector::Zero(12), u = Vector::Zero(6);
  x.segment(4, 4) << 0.0, 0.0, 2.0, std::numbers::pi / 2;
  u.segment(2, 2) << 1.0, -0.5;
  const Vector n = car.step(x, u);
  CHECK(std::abs(n(4)) < 1e-15);
  CHECK(n(5) == Catch::Approx(0.2));
  CHECK(n(6) == Catch::Approx(2.1));
  CHECK(n(7) == Catch::Approx(std::numbers::pi / 2 - 0.05));
}

TEST_CASE("cost examples") {
  PlatooningEnv car;
  Vector x = Vector::Zero(12);
  x.segment(0, 4) << 3.0, 0.0, 1.0, std::numbers::pi / 2;
  x(4) = 0.5;
  x(8) = 0.5;
  CHECK(car.cost(0, x, Vector::Zero(6)) == Catch::Approx(0.0).margin(1e-15));
  // Follower: 5 (0.5 - 3)^2 + (0 - 1)^2 + (0 - pi/2)^2 + a^2 + w^2
  Vector u = Vector::Zero(6);
  u.segment(2, 2) << 0.5, 1.0;
  const double pi2 = std::numbers::pi / 2;
  CHECK(car.cost(1, x, u) == Catch::Approx(5 * 6.25 + 1 + pi2 * pi2 + 1.25));

  BasketballEnv court;
  Vector b = Vector::Zero(24);
  b(1) = -std::sqrt(1.5);
  CHECK(court.cost(0, b, Vector::Zero(12)) == Catch::Approx(0.0).margin(1e-12));
  b(1) = 0.2;
  const double ring = 0.04 - 1.5;
  CHECK(court.cost(0, b, Vector::Zero(12)) == Catch::Approx(ring * ring + 20.0));
  // Defender 2 tracks 0.75 of player 1; forward 5 screens player 4.
  Vector d = Vector::Zero(24);
  d.segment(0, 2) << 2.0, -4.0;
  d.segment(4, 2) << 1.5, -3.0;
  CHECK(court.cost(1, d, Vector::Zero(12)) == Catch::Approx(0.0).margin(1e-15));
  d.segment(12, 2) << 1.0, 1.0;
  d.segment(16, 2) << 1.0, 2.0;
  CHECK(court.cost(4, d, Vector::Zero(12)) == Catch::Approx(1.0));

  CHECK_THROWS_AS(court.cost(6, d, Vector::Zero(12)), InvalidAgent);
  CHECK_THROWS_AS(car.cost(-1, x, u), InvalidAgent);
}

TEST_CASE("derivative examples") {
  LqEnv lq(reference_game());
  const Vector x = Vector::Ones(2), u = Vector::Ones(2);
  CHECK(lq.jacobian_x(x, u) == reference_game().A);
  CHECK(lq.cost_hess_x(1, x, u) == 2.0 * reference_game().Q[1]);
  CHECK(lq.cost_hess_u(0, x, u) == 2.0 * reference_game().R[0]);

  PlatooningEnv car(0.1);
  Vector s = Vector::Zero(12);
  s(2) = 1.0;  // v = 1, theta = 0
  const Matrix J = car.jacobian_x(s, Vector::Zero(6));
  CHECK(J(0, 2) == Catch::Approx(0.1));
  CHECK(J(0, 3) == 0.0);
}

TEST_CASE("analytic derivatives match finite differences") {
  std::mt19937_64 rng(51);
  for (const auto& env : all_envs()) {
    INFO(env->name());
    for (int trial = 0; trial < 50; ++trial) {
      const auto [x, u] = smooth_point(*env, rng);
      const auto fx = fd_jacobian([&](const Vector& v) { return env->step(v, u); }, x);
      const auto fu = fd_jacobian([&](const Vector& v) { return env->step(x, v); }, u);
      CHECK(scaled_err(env->jacobian_x(x, u), fx) <= 1e-5);
      CHECK(scaled_err(env->jacobian_u(x, u), fu) <= 1e-5);
      const Derivatives d = env->derivatives(x, u);
      for (int i = 0; i < env->agent_count(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const int off = env->control_offset(i), mi = env->control_dim(i);
        auto with_ui = [&](const Vector& v) {
          Vector w = u;
          w.segment(off, mi) = v;
          return w;
        };
        const Vector gx = fd_gradient([&](const Vector& v) { return env->cost(i, v, u); }, x);
        const Vector gu = fd_gradient([&](const Vector& v) { return env->cost(i, x, with_ui(v)); },
                                      u.segment(off, mi));
        const Matrix hx = fd_jacobian([&](const Vector& v) { return env->cost_grad_x(i, v, u); }, x);
        const Matrix hu = fd_jacobian(
            [&](const Vector& v) { return env->cost_grad_u(i, x, with_ui(v)); }, u.segment(off, mi));
        CHECK(scaled_err(d.cx[ui], gx) <= 1e-5);
        CHECK(scaled_err(d.cu[ui], gu) <= 1e-5);
        CHECK(scaled_err(d.cxx[ui], hx) <= 1e-5);
        CHECK(scaled_err(d.cuu[ui], hu) <= 1e-5);
        CHECK(scaled_err(env->jacobian_u_agent(x, u, i), fu.middleCols(off, mi)) <= 1e-5);
      }
    }
  }
}

TEST_CASE("basketball baseline kink") {
  BasketballEnv court;
  Vector x = BasketballEnv::default_layout().nominal;
  const Vector u = Vector::Zero(12);
  for (int i : {0, 2}) {
    const int py = 4 * i + 1;
    x(py) = 0.0;
    Vector left = x, right = x;
    left(py) = -1e-9;
    right(py) = 1e-9;
    // Continuous across the baseline.
    CHECK(std::abs(court.cost(i, left, u) - court.cost(i, right, u)) < 1e-6);
    // The reported gradient lies between the one-sided slopes.
    const double h = 1e-7;
    Vector up = x, down = x;
    up(py) += h;
    down(py) -= h;
    const double slope_right = (court.cost(i, up, u) - court.cost(i, x, u)) / h;
    const double slope_left = (court.cost(i, x, u) - court.cost(i, down, u)) / h;
    const double g = court.cost_grad_x(i, x, u)(py);
    CHECK(g >= slope_left - 1e-4);
    CHECK(g <= slope_right + 1e-4);
    CHECK(slope_right - slope_left == Catch::Approx(100.0).margin(1e-3));
  }
}

TEST_CASE("initial state sampling") {
  LqEnv lq(reference_game());
  const auto samples = lq.sample_initial(123, 1000);
  int first = 0;
  for (const auto& s : samples) {
    const bool a = (s - reference_game().initial_states[0].x).norm() == 0.0;
    const bool b = (s - reference_game().initial_states[1].x).norm() == 0.0;
    REQUIRE((a || b));
    first += a;
  }
  CHECK(first == 500);  // systematic sampling: exact for p = 1/2 and even counts

  for (const auto& env : all_envs()) {
    const auto a = env->sample_initial(9, 5), b = env->sample_initial(9, 5);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK((a[k] - b[k]).norm() == 0.0);
  }

  PlatooningEnv car;
  for (const auto& s : car.sample_initial(4, 20)) {
    std::set<long> lanes{std::lround(s(0) * 2), std::lround(s(4) * 2), std::lround(s(8) * 2)};
    CHECK(lanes.size() == 3);
  }
  BasketballEnv court;
  for (const auto& s : court.sample_initial(4, 20))
    for (int i = 0; i < 6; ++i) CHECK(s(4 * i + 1) < 0.0);
}

TEST_CASE("LqEnv wraps the game without changing it") {
  const auto g = reference_game();
  LqEnv lq(g);
  const auto a = solve_nash(g), b = solve_nash(lq.game());
  CHECK(a.profile.flatten() == b.profile.flatten());
  CHECK(pseudo_gradient(g, a.profile) == pseudo_gradient(lq.game(), b.profile));
}
