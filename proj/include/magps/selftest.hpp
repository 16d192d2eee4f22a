#pragma once

// Invariant suites run by `magps selftest`: each checks a solver against an
// independent oracle (finite differences, residuals, best responses).

#include <cstdio>
#include <functional>
#include <iomanip>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "magps/commands.hpp"

namespace magps {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace selftest {

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

inline double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

/// Profiles near the Nash equilibrium that keep the closed loop contractive.
inline FeedbackProfile random_stabilizing(const LinearQuadraticGame& g, const FeedbackProfile& center,
                                          std::mt19937_64& rng) {
  for (;;) {
    FeedbackProfile K = center;
    for (auto& k : K.gains) k += random_matrix(rng, k.rows(), k.cols(), 0.1);
    if (spectral_radius(closed_loop(g, K)) < 0.95) return K;
  }
}

inline SuiteResult policy_gradients() {
  const auto g = reference_game();
  const auto nash = solve_nash(g).profile;
  std::mt19937_64 rng(1);
  double worst = 0.0;
  const double h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    const FeedbackProfile K = random_stabilizing(g, nash, rng);
    for (int i = 0; i < g.agent_count(); ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const Matrix analytic = policy_gradient(g, K, i);
      Matrix fd(analytic.rows(), analytic.cols());
      for (Eigen::Index a = 0; a < fd.rows(); ++a)
        for (Eigen::Index b = 0; b < fd.cols(); ++b) {
          FeedbackProfile p = K, m = K;
          p[ui](a, b) += h;
          m[ui](a, b) -= h;
          fd(a, b) = (agent_cost(g, p, i) - agent_cost(g, m, i)) / (2 * h);
        }
      worst = std::max(worst, rel_err(analytic.reshaped(), fd.reshaped()));
    }
  }
  return {"policy gradients vs finite differences", worst <= 1e-5,
          "max rel. err " + sci(worst) + " (tol 1e-5)"};
}

inline SuiteResult lyapunov_residuals() {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 5;
    Matrix M = random_matrix(rng, n, n);
    M *= 0.9 / std::max(spectral_radius(M), 1e-9);
    const Matrix L = random_matrix(rng, n, n);
    const Matrix W = L * L.transpose() + Matrix::Identity(n, n);
    const Matrix P = solve_discrete_lyapunov(M, W);
    worst = std::max(worst, lyapunov_residual(M, W, P) / P.norm());
  }
  return {"Lyapunov residuals", worst <= 1e-10, "max rel. residual " + sci(worst) + " (tol 1e-10)"};
}

inline SuiteResult nash_residuals() {
  const auto g = reference_game();
  const NashSolution sol = solve_nash(g);
  double worst = sol.pseudo_gradient_norm;
  for (int i = 0; i < g.agent_count(); ++i) worst = std::max(worst, nash_residual(g, sol.profile, i));
  const RegularizedLQGame rg{g, biased_guide(sol.profile, 0.1), 0.01};
  const NashSolution reg = solve_regularized_nash(rg);
  for (int i = 0; i < g.agent_count(); ++i) worst = std::max(worst, regularized_nash_residual(rg, reg.profile, i));
  bool bound = true;
  for (const auto& b : bias_bound(rg, sol.profile, reg.profile)) bound = bound && b.holds();
  return {"Nash residuals and bias bound", sol.converged && reg.converged && worst <= 1e-8 && bound,
          "max residual " + sci(worst) + " (tol 1e-8), bias bound " + (bound ? "holds" : "violated")};
}

inline SuiteResult finite_best_responses() {
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + trial % 4, N = 1 + trial % 3, T = 5 + 3 * trial;
    FiniteHorizonLQGame f;
    f.horizon = T;
    f.x0 = random_matrix(rng, n, 1).col(0);
    for (int t = 0; t <= T; ++t) {
      Matrix A = random_matrix(rng, n, n);
      f.A.push_back(0.9 * A / std::max(spectral_radius(A), 1e-9));
      std::vector<Matrix> B, Q, R;
      std::vector<Vector> q, r;
      for (int i = 0; i < N; ++i) {
        B.push_back(random_matrix(rng, n, 1 + i % 2));
        const Matrix Lq = random_matrix(rng, n, n);
        Q.push_back(Lq * Lq.transpose() + 0.1 * Matrix::Identity(n, n));
        q.push_back(random_matrix(rng, n, 1).col(0));
        const Matrix Lr = random_matrix(rng, 1 + i % 2, 1 + i % 2);
        R.push_back(Lr * Lr.transpose() + Matrix::Identity(1 + i % 2, 1 + i % 2));
        r.push_back(random_matrix(rng, 1 + i % 2, 1).col(0));
      }
      f.B.push_back(B);
      f.Q.push_back(Q);
      f.q.push_back(q);
      f.R.push_back(R);
      f.r.push_back(r);
    }
    const auto sol = solve_finite_nash(f);
    for (int i = 0; i < N; ++i) worst = std::max(worst, best_response_residual(f, sol.profile, i));
  }
  return {"finite-horizon best responses", worst <= 1e-7, "max residual " + sci(worst) + " (tol 1e-7)"};
}

inline SuiteResult network_gradients() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> width(1, 5);
  double worst = 0.0;
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    Network net = Network::make(width(rng), {width(rng), width(rng)}, width(rng), rng);
    const Matrix X = random_matrix(rng, net.input_dim(), 1);
    const Matrix w = random_matrix(rng, net.output_dim(), 1);
    auto loss = [&](const Network& n, const Matrix& x) { return (n.forward(x).array() * w.array()).sum(); };
    ForwardCache cache;
    net.forward(X, cache);
    const GradientRecord g = net.backward(cache, w);
    const Vector p = net.flatten();
    Vector fd(p.size());
    Network probe = net;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      Vector q = p;
      q(k) += h;
      probe.unflatten(q);
      const double up = loss(probe, X);
      q(k) -= 2 * h;
      probe.unflatten(q);
      fd(k) = (up - loss(probe, X)) / (2 * h);
    }
    Vector fdx(net.input_dim());
    for (int k = 0; k < net.input_dim(); ++k) {
      Matrix a = X, b = X;
      a(k, 0) += h;
      b(k, 0) -= h;
      fdx(k) = (loss(net, a) - loss(net, b)) / (2 * h);
    }
    worst = std::max({worst, rel_err(g.flatten(), fd), rel_err(g.dx.col(0), fdx)});
  }
  return {"network gradients vs finite differences", worst <= 1e-4,
          "max rel. err " + sci(worst) + " (tol 1e-4)"};
}

inline SuiteResult local_game_exactness() {
  const auto g = reference_game();
  const LqEnv env(g);
  const auto nash = solve_nash(g).profile;
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const FeedbackProfile K = random_stabilizing(g, nash, rng);
    Matrix stacked(2, 2);
    stacked << K[0], K[1];
    const JointPolicy policy = [stacked](const Vector& x) -> Vector { return -stacked * x; };
    const Vector x0 = random_matrix(rng, 2, 1).col(0);
    GuidanceOptions opt;
    opt.horizon = 10;
    const auto res = guidance_control(env, policy, x0, opt);
    const auto global = solve_finite_nash(FiniteHorizonLQGame::lift(g, 10, x0)).profile;
    Vector expected(2);
    expected << global.control(0, 0, x0), global.control(0, 1, x0);
    worst = std::max(worst, res.degraded ? 1.0 : (res.guidance - expected).norm());
  }
  return {"local LQ guidance exactness", worst <= 1e-8, "max deviation " + sci(worst) + " (tol 1e-8)"};
}

}  // namespace selftest

inline std::vector<SuiteResult> run_selftest_suites() {
  const std::vector<std::function<SuiteResult()>> suites{
      selftest::policy_gradients,      selftest::lyapunov_residuals, selftest::nash_residuals,
      selftest::finite_best_responses, selftest::network_gradients,  selftest::local_game_exactness};
  std::vector<SuiteResult> out;
  for (const auto& s : suites) {
    try {
      out.push_back(s());
    } catch (const std::exception& e) {
      out.push_back({"(suite raised)", false, e.what()});
    }
  }
  return out;
}

/// Prints the table and returns the number of failed suites (capped at 125).
inline int cmd_selftest(const CommandContext& ctx) {
  RunManifest manifest(ctx.out_dir, "selftest", json::object(), json::object(), default_numerics());
  const auto results = run_selftest_suites();
  auto& out = *ctx.out;
  int failed = 0;
  json table = json::array();
  for (const auto& r : results) {
    out << std::left << std::setw(44) << r.name << (r.passed ? "PASS  " : "FAIL  ") << r.detail << "\n";
    failed += !r.passed;
    table.push_back({{"suite", r.name}, {"passed", r.passed}, {"detail", r.detail}});
  }
  out << (failed == 0 ? "all suites passed" : std::to_string(failed) + " suite(s) failed") << "\n";
  const auto path = ctx.out_dir / "selftest.json";
  write_json_file(path, table);
  manifest.add_output(path);
  manifest.finish(failed == 0 ? "ok" : "failed");
  return std::min(failed, 125);
}

}  // namespace magps
