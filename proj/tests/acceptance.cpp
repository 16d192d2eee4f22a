// Acceptance checks: one PASS/FAIL line per criterion, tolerances pinned
// below. Exits with the number of failed criteria.
//
//   acceptance [--only 1,4,7] [--cli path/to/magps] [--work DIR] [--configs DIR]

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>

#include "magps/run.hpp"
#include "support.hpp"

using namespace magps;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double budget_seconds;
  std::function<Outcome()> check;
};

struct Settings {
  std::string cli;
  fs::path work;
  fs::path configs;
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path fresh(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

FeedbackProfile random_stabilizing(const LinearQuadraticGame& g, const FeedbackProfile& center,
                                   std::mt19937_64& rng, double scale = 0.1) {
  for (;;) {
    FeedbackProfile K = center;
    for (auto& k : K.gains) k += support::random_matrix(rng, k.rows(), k.cols(), scale);
    if (spectral_radius(closed_loop(g, K)) < 0.95) return K;
  }
}

double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

// 1: analytic policy gradients against central differences of the cost.
Outcome gradient_oracle() {
  const auto g = reference_game();
  const auto nash = solve_nash(g).profile;
  std::mt19937_64 rng(101);
  const double h = 1e-6, tol = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const FeedbackProfile K = random_stabilizing(g, nash, rng, 0.2);
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
  return {worst <= tol, "20 profiles, max rel. err " + sci(worst) + " (tol " + sci(tol) + ")"};
}

// 2: stationarity of the solved equilibrium and the sign structure of the
// pseudo-gradient Jacobian there.
Outcome nash_stationarity() {
  const auto g = reference_game();
  const NashSolution sol = solve_nash(g);
  const double tol = 1e-8;
  const double w = pseudo_gradient(g, sol.profile).norm();
  double worst = 0.0;
  for (int i = 0; i < g.agent_count(); ++i) worst = std::max(worst, nash_residual(g, sol.profile, i));
  const auto eig = eigenvalues(pseudo_gradient_jacobian(g, sol.profile));
  const double min_re = min_real_part(eig);
  std::ostringstream d;
  d << "|w(K*)| " << sci(w) << ", max residual " << sci(worst) << " (tol " << sci(tol)
    << "), Jacobian eigenvalues";
  for (const auto& e : eig) d << " " << sci(e.real()) << (e.imag() >= 0 ? "+" : "") << sci(e.imag()) << "i";
  d << "; negative real part required, min " << sci(min_re);
  return {sol.converged && w <= tol && worst <= tol && min_re < 0.0, d.str()};
}

// 3: guided gradient play from a perturbed equilibrium with a biased guide.
Outcome guided_play_reproduction() {
  const auto g = reference_game();
  const auto nash = solve_nash(g).profile;
  const FeedbackProfile guide = biased_guide(nash, 0.1);
  const FeedbackProfile K0 = perturbed_profile(nash, 0.05, 1);
  const double eta = 0.4, tol = 1e-5;
  const long steps = 600000;

  const RegularizedLQGame plain{g, guide, 0.0};
  const RegularizedLQGame guided{g, guide, 0.01};
  const auto run0 = guided_gradient_play(plain, K0, eta, steps, steps);
  const auto run1 = guided_gradient_play(guided, K0, eta, steps, steps);
  const FeedbackProfile reg_nash = solve_regularized_nash(guided).profile;

  const double d0 = distance(run0.final_profile, nash);
  const double d1_reg = distance(run1.final_profile, reg_nash);
  const double d1_nash = distance(run1.final_profile, nash);
  const double re0 = min_real_part(stability_diagnostic(plain, nash));
  const double re1 = min_real_part(stability_diagnostic(guided, reg_nash));

  const bool diverges = run0.truncated_at < 0 ? d0 > 10.0 * d1_reg : true;
  const bool converges = run1.truncated_at < 0 && d1_reg <= tol;
  const bool stability = re1 > 0.0 && re0 <= 0.0;
  std::ostringstream d;
  d << "rho=0: |K-K*| " << sci(d0) << (run0.truncated_at >= 0 ? " (left stabilizing set)" : "")
    << "; rho=0.01: |K-Kh*| " << sci(d1_reg) << " (tol " << sci(tol) << "), |K-K*| " << sci(d1_nash)
    << "; min Re eig rho=0 " << sci(re0) << " (must be <= 0), rho=0.01 " << sci(re1) << " (must be > 0)";
  return {diverges && converges && stability, d.str()};
}

// 4: bias bound and growth of the bias along the weight grid.
Outcome bias_bound_grid() {
  const auto g = reference_game();
  const auto nash = solve_nash(g).profile;
  const FeedbackProfile guide = biased_guide(nash, 0.1);
  bool holds = true, monotone = true;
  double prev = -1.0, worst_margin = -std::numeric_limits<double>::infinity();
  std::ostringstream d;
  d << "bias";
  for (double rho : {1e-3, 1e-2, 1e-1, 1.0}) {
    const RegularizedLQGame rg{g, guide, rho};
    const auto reg = solve_regularized_nash(rg);
    if (!reg.converged) return {false, "regularized solve did not converge at rho " + sci(rho)};
    for (const auto& b : bias_bound(rg, nash, reg.profile)) {
      holds = holds && b.holds(1e-9);
      worst_margin = std::max(worst_margin, b.lhs - b.rhs);
    }
    const double bias = distance(reg.profile, nash);
    monotone = monotone && bias >= prev;
    prev = bias;
    d << " " << sci(bias);
  }
  d << "; max lhs-rhs " << sci(worst_margin) << " (slack 1e-09)";
  return {holds && monotone, d.str()};
}

// 5: finite-horizon solver against best responses, and the lifted game
// against the infinite-horizon gains.
Outcome finite_horizon_oracle() {
  std::mt19937_64 rng(105);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 6), N = 1 + static_cast<int>(rng() % 3);
    const int T = 1 + static_cast<int>(rng() % 30);
    std::vector<int> m(static_cast<std::size_t>(N));
    for (int& mi : m) mi = 1 + static_cast<int>(rng() % 2);
    FiniteHorizonLQGame f;
    f.horizon = T;
    f.x0 = support::random_vector(rng, n);
    for (int t = 0; t <= T; ++t) {
      Matrix A = support::random_matrix(rng, n, n);
      f.A.push_back(0.95 * A / std::max(spectral_radius(A), 1e-9));
      std::vector<Matrix> B, Q, R;
      std::vector<Vector> q, r;
      for (int mi : m) {
        B.push_back(support::random_matrix(rng, n, mi));
        Q.push_back(support::random_spd(rng, n));
        q.push_back(support::random_vector(rng, n));
        R.push_back(support::random_spd(rng, mi, 1.0));
        r.push_back(support::random_vector(rng, mi));
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

  const auto g = reference_game();
  const auto nash = solve_nash(g).profile;
  const auto lifted = solve_finite_nash(FiniteHorizonLQGame::lift(g, 200, Vector::Ones(2))).profile;
  double gap = 0.0;
  for (int i = 0; i < g.agent_count(); ++i) {
    const auto ui = static_cast<std::size_t>(i);
    gap = std::max(gap, (lifted.K.front()[ui] - nash[ui]).norm());
  }
  const bool a = worst <= 1e-7, b = gap <= 1e-3;
  return {a && b, std::string("(a) ") + (a ? "pass" : "fail") + ", max best-response residual " + sci(worst) +
                      " (tol 1e-07); (b) " + (b ? "pass" : "fail") + ", T=200 first-stage gain gap " +
                      sci(gap) + " (tol 0.001)"};
}

// 6: local guidance on the LQ environment against the lifted game.
Outcome local_exactness() {
  const auto g = reference_game();
  const LqEnv env(g);
  const auto nash = solve_nash(g).profile;
  std::mt19937_64 rng(106);
  GuidanceOptions opt;
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const FeedbackProfile K = random_stabilizing(g, nash, rng, 0.2);
    Matrix stacked(2, 2);
    stacked << K[0], K[1];
    const JointPolicy policy = [stacked](const Vector& x) -> Vector { return -stacked * x; };
    const Vector x0 = support::random_vector(rng, 2);
    const auto res = guidance_control(env, policy, x0, opt);
    const auto lifted = solve_finite_nash(FiniteHorizonLQGame::lift(g, opt.horizon, x0)).profile;
    Vector expected(2);
    expected << lifted.control(0, 0, x0), lifted.control(0, 1, x0);
    worst = std::max(worst, res.degraded ? std::numeric_limits<double>::infinity() : (res.guidance - expected).norm());
  }
  return {worst <= 1e-8, "10 states, horizon " + std::to_string(opt.horizon) + ", max deviation " + sci(worst) +
                             " (tol 1e-08)"};
}

// 7: network parameter and input gradients against central differences.
Outcome network_gradients() {
  std::mt19937_64 rng(107);
  std::uniform_int_distribution<int> width(1, 6), depth(1, 3);
  const double h = 1e-5, tol = 1e-4;
  double worst_p = 0.0, worst_x = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> hidden(static_cast<std::size_t>(depth(rng)));
    for (int& w : hidden) w = width(rng);
    Network net = Network::make(width(rng), hidden, width(rng), rng);
    const Matrix X = support::random_matrix(rng, net.input_dim(), 1);
    const Matrix w = support::random_matrix(rng, net.output_dim(), 1);
    auto loss = [&](const Network& n, const Matrix& x) { return (n.forward(x).array() * w.array()).sum(); };
    ForwardCache cache;
    net.forward(X, cache);
    const GradientRecord grad = net.backward(cache, w);
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
    worst_p = std::max(worst_p, rel_err(grad.flatten(), fd));
    worst_x = std::max(worst_x, rel_err(grad.dx.col(0), fdx));
  }
  return {worst_p <= tol && worst_x <= tol, "20 nets, max rel. err parameters " + sci(worst_p) + ", inputs " +
                                                sci(worst_x) + " (tol " + sci(tol) + ")"};
}

// Runs `train` on a repository config and returns the per-seed reports.
std::vector<json> train_reports(const Settings& s, const std::string& config, const std::string& tag) {
  std::ostringstream log;
  CommandContext ctx;
  const fs::path path = s.configs / config;
  ctx.config = read_json_file(path.string());
  ctx.source = path.string();
  ctx.base_dir = s.configs;
  ctx.out_dir = fresh(s.work / tag);
  ctx.out = &log;
  const int code = run_command("train", ctx);
  if (code != kExitOk) throw Error("train exited with " + std::to_string(code));
  const json summary = read_json_file((ctx.out_dir / "train_summary.json").string());
  std::vector<json> reports;
  for (const auto& seed : summary.at("seeds"))
    reports.push_back(read_json_file(
        (ctx.out_dir / ("seed_" + std::to_string(seed.at("seed").get<std::uint64_t>())) / "report.json").string()));
  if (reports.empty()) throw Error(config + ": training produced no seed reports");
  return reports;
}

// 8: guided policy search on the LQ environment reaches the Nash costs.
Outcome train_lq(const Settings& s) {
  const auto reports = train_reports(s, "train_lq.json", "criterion8");
  bool ok = true;
  std::ostringstream d;
  for (const auto& r : reports) {
    const json& t = r["trained"];
    d << "seed " << r["seed"] << ": cost";
    for (std::size_t i = 0; i < 2; ++i) {
      const double c = t["mean_cost"][i], ref = t["nash_cost"][i];
      ok = ok && std::abs(c - ref) <= 0.1 * ref;
      d << " " << sci(c) << " vs " << sci(ref) << " (" << std::showpos << sci(100.0 * (c / ref - 1.0))
        << std::noshowpos << "%)";
    }
    const double radius = t["closed_loop_spectral_radius"];
    ok = ok && radius < 1.0 && t["non_finite_episodes"] == 0;
    d << ", spectral radius " << sci(radius) << "; ";
  }
  d << "tol 10%, radius < 1";
  return {ok, d.str()};
}

double seed_mean(const std::vector<json>& reports, const std::string& which, const std::string& key,
                 std::optional<std::size_t> agent = std::nullopt) {
  double sum = 0.0;
  for (const auto& r : reports) sum += agent ? r[which][key][*agent].get<double>() : r[which][key].get<double>();
  return sum / static_cast<double>(reports.size());
}

// 9: platooning improves and the two followers merge into the target lane.
Outcome train_platooning(const Settings& s) {
  const auto reports = train_reports(s, "train_platooning.json", "criterion9");
  const double before = seed_mean(reports, "untrained", "total_mean_cost");
  const double after = seed_mean(reports, "trained", "total_mean_cost");
  const double off2 = seed_mean(reports, "trained", "final_lane_offset", 1);
  const double off3 = seed_mean(reports, "trained", "final_lane_offset", 2);
  bool finite = true;
  for (const auto& r : reports) finite = finite && r["trained"]["non_finite_episodes"] == 0;
  std::ostringstream d;
  d << reports.size() << " seeds, mean cost " << sci(before) << " -> " << sci(after) << ", final lane offset agent 2 "
    << sci(off2) << ", agent 3 " << sci(off3) << " (tol 0.2)";
  return {finite && after < before && off2 <= 0.2 && off3 <= 0.2, d.str()};
}

// 10: basketball ring and tracking errors at least halve.
Outcome train_basketball(const Settings& s) {
  const auto reports = train_reports(s, "train_basketball.json", "criterion10");
  bool ok = true;
  std::ostringstream d;
  d << reports.size() << " seeds;";
  auto check = [&](const std::string& key, std::size_t i) {
    const double before = seed_mean(reports, "untrained", key, i);
    const double after = seed_mean(reports, "trained", key, i);
    ok = ok && after <= 0.5 * before;
    d << " agent " << i + 1 << " " << sci(before) << " -> " << sci(after) << " (" << sci(100.0 * (1.0 - after / before))
      << "% lower)";
  };
  d << " radial";
  for (std::size_t i : {0u, 2u}) check("mean_radial_error", i);
  d << "; tracking";
  for (std::size_t i : {1u, 3u, 5u}) check("mean_tracking_error", i);
  for (const auto& r : reports) ok = ok && r["trained"]["non_finite_episodes"] == 0;
  d << "; required >= 50% lower, no non-finite states";
  return {ok, d.str()};
}

// 11: every command replayed from its manifest writes identical files.
Outcome replay_determinism(const Settings& s) {
  if (s.cli.empty() || !fs::exists(s.cli)) return {false, "command-line binary not found: '" + s.cli + "'"};
  const fs::path root = fresh(s.work / "criterion11");
  auto quote = [](const fs::path& p) { return "'" + p.string() + "'"; };
  auto run = [&](const std::string& args, const fs::path& log) {
    const std::string cmd = quote(s.cli) + " " + args + " > " + quote(log) + " 2>&1";
    const int status = std::system(cmd.c_str());
    return status == 0;
  };
  auto outputs = [](const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename() != "manifest.json")
        out[fs::relative(e.path(), dir).generic_string()] = read_file(e.path());
    return out;
  };

  json guided = read_json_file((s.configs / "guided_play.json").string());
  guided["game_file"] = (s.configs / "reference_game.json").string();
  guided["steps"] = 5000;
  guided["record_every"] = 50;
  write_json_file(root / "guided_play_short.json", guided);

  const std::string smoke_ckpt = (root / "train" / "a" / "seed_1" / "checkpoints" / "final").string();
  const std::vector<std::pair<std::string, std::string>> commands{
      {"lq-nash", "--config " + quote(s.configs / "reference_game.json")},
      {"guided-play", "--config " + quote(root / "guided_play_short.json")},
      {"finite-lq", "--config " + quote(s.configs / "finite_lifted.json") + " --dump-stages"},
      {"train", "--config " + quote(s.configs / "train_smoke.json")},
      {"rollout", "--config " + quote(s.configs / "env_lq.json") + " --checkpoint " + quote(smoke_ckpt) +
                      " --episodes 3 --horizon 30"},
      {"eval", "--config " + quote(s.configs / "env_lq.json") + " --checkpoint " + quote(smoke_ckpt)},
      {"selftest", ""}};
  std::ostringstream d;
  bool ok = true;
  std::size_t files = 0;
  for (const auto& [name, args] : commands) {
    const fs::path a = root / name / "a", b = root / name / "b";
    if (!run(name + " " + args + " --out-dir " + quote(a), root / (name + ".log")) ||
        !run("replay --manifest " + quote(a / "manifest.json") + " --out-dir " + quote(b), root / (name + "_replay.log"))) {
      ok = false;
      d << name << " failed to run; ";
      continue;
    }
    const auto first = outputs(a), second = outputs(b);
    files += first.size();
    if (first.empty() || first != second) {
      ok = false;
      d << name << " outputs differ; ";
    }
  }
  d << commands.size() << " commands, " << files << " output files compared byte for byte";
  return {ok, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  Settings s;
  std::vector<int> only;
  s.work = fs::temp_directory_path() / "magps_acceptance";
#ifdef MAGPS_SOURCE_DIR
  s.configs = fs::path(MAGPS_SOURCE_DIR) / "configs";
#endif
#ifdef MAGPS_CLI_PATH
  s.cli = MAGPS_CLI_PATH;
#endif
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  app.add_option("--cli", s.cli, "path to the magps binary")->capture_default_str();
  app.add_option("--work", s.work, "scratch directory")->capture_default_str();
  app.add_option("--configs", s.configs, "repository configs directory")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "analytic policy gradients vs finite differences", 10, gradient_oracle},
      {2, "Nash stationarity and Jacobian sign structure", 30, nash_stationarity},
      {3, "guided gradient play with a biased guide", 300, guided_play_reproduction},
      {4, "bias bound over the weight grid", 60, bias_bound_grid},
      {5, "finite-horizon solver oracle", 120, finite_horizon_oracle},
      {6, "local LQ guidance exactness", 60, local_exactness},
      {7, "network gradient checks", 30, network_gradients},
      {8, "guided policy search on the LQ game", 900, [&] { return train_lq(s); }},
      {9, "platooning", 2700, [&] { return train_platooning(s); }},
      {10, "basketball", 3600, [&] { return train_basketball(s); }},
      {11, "replay determinism", 600, [&] { return replay_determinism(s); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("raised: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = o.passed && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << c.id << "  " << c.title << ": "
              << o.detail << "; " << std::fixed << std::setprecision(1) << secs << " s (budget "
              << std::setprecision(0) << c.budget_seconds << " s" << (in_time ? "" : ", exceeded") << ")\n"
              << std::defaultfloat << std::flush;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criterion(s) failed") << "\n";
  return std::min(failed, 125);
}
