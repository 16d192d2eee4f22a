#pragma once

// Command implementations behind the command-line tool. Each command takes a
// parsed configuration, writes a run manifest first, then its outputs.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "magps/io.hpp"
#include "magps/svg.hpp"

namespace magps {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitSolver = 2, kExitTrainingAborted = 3 };

/// Everything a command needs. `config` is the parsed configuration file;
/// relative paths inside it resolve against `base_dir`.
struct CommandContext {
  json config = json::object();
  std::string source = "config";
  std::filesystem::path base_dir = ".";
  std::filesystem::path out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  // Command-specific options.
  std::string checkpoint;
  int episodes = 4;
  int horizon = 100;
  bool dump_stages = false;
  std::ostream* out = &std::cout;
};

inline JsonReader config_reader(const CommandContext& ctx) {
  return JsonReader(ctx.config, ctx.source);
}

/// Options that are part of a run's identity, stored in its manifest.
inline json command_options(const CommandContext& ctx) {
  json j{{"episodes", ctx.episodes}, {"horizon", ctx.horizon}, {"dump_stages", ctx.dump_stages}};
  if (!ctx.checkpoint.empty())
    j["checkpoint"] = std::filesystem::absolute(ctx.checkpoint).lexically_normal().string();
  return j;
}

namespace detail {

inline std::string rho_tag(double rho) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", rho);
  return buf;
}

inline void write_svg(RunManifest& manifest, const std::filesystem::path& path,
                      const std::vector<svg::Panel>& panels, const std::string& title) {
  write_file_atomic(path, svg::render(panels, title));
  manifest.add_output(path);
}

/// 2-D positions of agent i in state x, for plotting.
inline std::pair<double, double> agent_position(const Environment& env, const Vector& x, int i) {
  if (env.name() == "platooning" || env.name() == "basketball") return {x(4 * i), x(4 * i + 1)};
  return {x(0), x.size() > 1 ? x(1) : 0.0};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Environment-specific summaries

/// Quantities the acceptance checks read: per-agent costs plus, depending on
/// the environment, lane offsets, radial and tracking errors, or the
/// closed-loop spectral radius of the policies linearized at the origin.
inline json environment_report(const Environment& env, const std::vector<Network>& policies,
                               int episodes, int horizon, double gamma, std::uint64_t seed) {
  const EvaluationResult ev = evaluate(env, policies, episodes, horizon, gamma, seed);
  json j;
  j["episodes"] = episodes;
  j["horizon"] = horizon;
  j["gamma"] = gamma;
  j["seed"] = seed;
  j["mean_cost"] = ev.mean;
  j["stddev_cost"] = ev.stddev;
  j["total_mean_cost"] = ev.total_mean();
  j["non_finite_episodes"] = ev.non_finite;

  if (env.name() == "platooning") {
    std::vector<double> offset(3, 0.0);
    for (const Vector& x : ev.final_states)
      for (int i = 0; i < 3; ++i)
        offset[static_cast<std::size_t>(i)] +=
            std::abs(x(4 * i) - PlatooningEnv::kTargetLane) / static_cast<double>(episodes);
    j["final_lane_offset"] = offset;
  } else if (env.name() == "basketball") {
    std::vector<double> radial(6, 0.0), tracking(6, 0.0);
    long samples = 0;
    for (const Vector& x0 : env.sample_initial(seed, episodes)) {
      const Episode ep = simulate(env, policies, x0, horizon, gamma);
      for (const Vector& x : ep.states) {
        ++samples;
        for (int i = 0; i < 6; ++i) {
          const auto ui = static_cast<std::size_t>(i);
          if (BasketballEnv::is_ring_player(i)) radial[ui] += BasketballEnv::radial_error(x, i);
          if (BasketballEnv::is_defender(i)) tracking[ui] += BasketballEnv::tracking_error(x, i);
        }
      }
    }
    for (int i = 0; i < 6; ++i) {
      radial[static_cast<std::size_t>(i)] /= static_cast<double>(samples);
      tracking[static_cast<std::size_t>(i)] /= static_cast<double>(samples);
    }
    j["mean_radial_error"] = radial;
    j["mean_tracking_error"] = tracking;
  } else if (const auto* lq = dynamic_cast<const LqEnv*>(&env)) {
    const auto& g = lq->game();
    const Vector origin = Vector::Zero(g.state_dim());
    const Matrix J = policy_jacobian(env, policies, origin);
    Matrix abar = g.A;
    for (int i = 0; i < g.agent_count(); ++i)
      abar += g.B[static_cast<std::size_t>(i)] * J.middleRows(env.control_offset(i), env.control_dim(i));
    j["closed_loop_spectral_radius"] = spectral_radius(abar);
    j["policy_offset_at_origin"] = to_json(Vector(joint_actions(env, policies, Matrix(origin)).col(0)));
    try {
      const NashSolution nash = solve_nash(g);
      std::vector<double> nash_cost;
      for (int i = 0; i < g.agent_count(); ++i) nash_cost.push_back(agent_cost(g, nash.profile, i));
      j["nash_cost"] = nash_cost;
    } catch (const Error&) {
      j["nash_cost"] = nullptr;
    }
  }
  return j;
}

// ---------------------------------------------------------------------------
// lq-nash

inline int cmd_lq_nash(const CommandContext& ctx) {
  const LinearQuadraticGame g = game_from_json(config_reader(ctx));
  RunManifest manifest(ctx.out_dir, "lq-nash", game_to_json(g), json::object(), default_numerics());
  auto& out = *ctx.out;
  const NashSolution sol = solve_nash(g);
  json res;
  res["converged"] = sol.converged;
  res["sweeps"] = sol.sweeps;
  res["gains"] = to_json(sol.profile);
  res["pseudo_gradient_norm"] = sol.pseudo_gradient_norm;
  res["stationarity_residuals"] = sol.stationarity_residuals;
  std::vector<double> nash_res, costs;
  for (int i = 0; i < g.agent_count(); ++i) {
    nash_res.push_back(nash_residual(g, sol.profile, i));
    costs.push_back(agent_cost(g, sol.profile, i));
  }
  res["nash_residuals"] = nash_res;
  res["costs"] = costs;
  res["closed_loop_spectral_radius"] = spectral_radius(closed_loop(g, sol.profile));
  const auto eig = eigenvalues(pseudo_gradient_jacobian(g, sol.profile));
  res["jacobian_eigenvalues"] = complex_to_json(eig);
  res["jacobian_min_real_part"] = min_real_part(eig);
  const auto path = ctx.out_dir / "lq_nash.json";
  write_json_file(path, res);
  manifest.add_output(path);

  out << std::setprecision(10);
  out << "converged: " << (sol.converged ? "yes" : "no") << " after " << sol.sweeps << " sweeps\n";
  for (int i = 0; i < g.agent_count(); ++i)
    out << "K" << i + 1 << " = " << sol.profile[static_cast<std::size_t>(i)].format(
                                        Eigen::IOFormat(10, Eigen::DontAlignCols, ", ", "; ", "", "", "[", "]"))
        << "  cost " << costs[static_cast<std::size_t>(i)] << "  residual "
        << nash_res[static_cast<std::size_t>(i)] << "\n";
  out << "||w(K*)|| = " << sol.pseudo_gradient_norm << "\n";
  out << "Jacobian eigenvalues:";
  for (const auto& e : eig) out << " (" << e.real() << (e.imag() < 0 ? "" : "+") << e.imag() << "i)";
  out << "\n";
  if (!sol.converged) {
    manifest.finish("solver did not converge");
    out << "error: Nash iteration did not converge; residuals above\n";
    return kExitSolver;
  }
  manifest.finish("ok");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// guided-play

struct GuidedRunSummary {
  double rho = 0.0;
  double eta = 0.0;
  FeedbackProfile regularized_nash;
  FeedbackProfile final_profile;
  double final_distance_to_nash = 0.0;
  double final_distance_to_reg_nash = 0.0;
  long truncated_at = -1;
  bool converged = false;
  std::vector<std::complex<double>> stability;
};

inline int cmd_guided_play(const CommandContext& ctx) {
  GuidedPlayConfig cfg = guided_play_from_json(config_reader(ctx), ctx.base_dir);
  if (ctx.seed) cfg.seed = *ctx.seed;
  RunManifest manifest(ctx.out_dir, "guided-play", guided_play_to_json(cfg), {{"perturbation", cfg.seed}},
                       cfg.numerics);
  auto& out = *ctx.out;
  const auto& g = cfg.game;
  const NashSolution nash = solve_nash(g, std::nullopt, cfg.numerics);
  if (!nash.converged) {
    manifest.finish("solver did not converge");
    out << "error: Nash iteration did not converge (||w|| = " << nash.pseudo_gradient_norm << ")\n";
    return kExitSolver;
  }
  const FeedbackProfile guide = cfg.guide ? *cfg.guide : biased_guide(nash.profile, cfg.guide_bias);
  const FeedbackProfile K0 = cfg.k0 ? *cfg.k0 : perturbed_profile(nash.profile, cfg.perturbation_norm, cfg.seed);

  json summary = json::array();
  std::vector<GuidedRunSummary> runs;
  for (std::size_t r = 0; r < cfg.rho.size(); ++r) {
    GuidedRunSummary s;
    s.rho = cfg.rho[r];
    s.eta = cfg.step_size(r);
    const RegularizedLQGame rg{g, guide, s.rho};
    const NashSolution reg = s.rho == 0.0 ? nash : solve_regularized_nash(rg, std::nullopt, cfg.numerics);
    if (!reg.converged) {
      manifest.finish("solver did not converge");
      out << "error: regularized Nash iteration did not converge at rho = " << s.rho << "\n";
      return kExitSolver;
    }
    s.regularized_nash = reg.profile;
    const GradientPlayResult play = guided_gradient_play(rg, K0, s.eta, cfg.steps, cfg.record_every, cfg.numerics);
    s.final_profile = play.final_profile;
    s.final_distance_to_nash = distance(play.final_profile, nash.profile);
    s.final_distance_to_reg_nash = distance(play.final_profile, reg.profile);
    s.truncated_at = play.truncated_at;
    s.converged = !play.left_stabilizing_set && s.final_distance_to_reg_nash <= cfg.converged_tolerance;
    s.stability = stability_diagnostic(rg, reg.profile, cfg.numerics);

    const std::string tag = detail::rho_tag(s.rho);
    const auto csv_path = ctx.out_dir / ("guided_play_rho" + tag + ".csv");
    {
      CsvWriter csv(csv_path, {"iter", "agent", "row", "col", "value", "distance_to_nash", "distance_to_reg_nash"});
      if (play.left_stabilizing_set)
        csv.comment("truncated at iteration " + std::to_string(play.truncated_at) +
                    ": the next iterate left the stabilizing set");
      for (std::size_t k = 0; k < play.iterates.size(); ++k) {
        const FeedbackProfile& K = play.iterates[k];
        const double dn = distance(K, nash.profile), dr = distance(K, reg.profile);
        for (std::size_t i = 0; i < K.size(); ++i)
          for (Eigen::Index a = 0; a < K[i].rows(); ++a)
            for (Eigen::Index b = 0; b < K[i].cols(); ++b)
              csv.row({static_cast<double>(play.iterations[k]), static_cast<double>(i), static_cast<double>(a),
                       static_cast<double>(b), K[i](a, b), dn, dr});
      }
    }
    manifest.add_output(csv_path);

    // Phase plot per agent over its first two gain entries.
    std::vector<svg::Panel> panels;
    for (std::size_t i = 0; i < g.B.size(); ++i) {
      if (K0[i].size() < 2) continue;
      auto entry = [&](const FeedbackProfile& K, int e) { return K[i](e / K[i].cols(), e % K[i].cols()); };
      svg::Panel p;
      p.title = "agent " + std::to_string(i + 1);
      p.xlabel = "gain entry 1";
      p.ylabel = "gain entry 2";
      svg::Series path;
      path.color = svg::color(i);
      path.endpoints = true;
      path.label = "iterates";
      for (const auto& K : play.iterates) {
        path.x.push_back(entry(K, 0));
        path.y.push_back(entry(K, 1));
      }
      p.series.push_back(path);
      p.markers.push_back({entry(nash.profile, 0), entry(nash.profile, 1), "Nash", "#000000", true});
      if (s.rho > 0.0)
        p.markers.push_back({entry(reg.profile, 0), entry(reg.profile, 1), "regularized", "#2ca02c", false});
      panels.push_back(p);
    }
    if (!panels.empty())
      detail::write_svg(manifest, ctx.out_dir / ("guided_play_rho" + tag + ".svg"), panels,
                        "gradient play, rho = " + tag);

    json js;
    js["rho"] = s.rho;
    js["eta"] = s.eta;
    js["steps"] = cfg.steps;
    js["final_distance_to_nash"] = s.final_distance_to_nash;
    js["final_distance_to_reg_nash"] = s.final_distance_to_reg_nash;
    js["truncated_at"] = s.truncated_at >= 0 ? json(s.truncated_at) : json(nullptr);
    js["converged"] = s.converged;
    js["regularized_nash"] = to_json(reg.profile);
    js["final_profile"] = to_json(play.final_profile);
    js["stability_eigenvalues"] = complex_to_json(s.stability);
    js["stability_min_real_part"] = min_real_part(s.stability);
    summary.push_back(js);
    out << "rho " << tag << ": distance to Nash " << s.final_distance_to_nash << ", to regularized Nash "
        << s.final_distance_to_reg_nash << (s.converged ? " (converged)" : "")
        << (play.left_stabilizing_set ? " (truncated)" : "") << ", min Re(eig) "
        << min_real_part(s.stability) << "\n";
    runs.push_back(std::move(s));
  }
  const auto sum_path = ctx.out_dir / "guided_play_summary.json";
  write_json_file(sum_path, {{"nash", to_json(nash.profile)},
                             {"guide", to_json(guide)},
                             {"k0", to_json(K0)},
                             {"runs", summary}});
  manifest.add_output(sum_path);
  manifest.finish("ok");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// finite-lq

inline int cmd_finite_lq(const CommandContext& ctx) {
  const FiniteHorizonLQGame g = finite_game_from_json(config_reader(ctx), ctx.base_dir);
  RunManifest manifest(ctx.out_dir, "finite-lq", finite_game_to_json(g), json::object(), default_numerics());
  manifest.set("options", command_options(ctx));
  const FiniteNashResult sol = solve_finite_nash(g);
  std::vector<double> residuals;
  for (int i = 0; i < g.agent_count(); ++i) residuals.push_back(best_response_residual(g, sol.profile, i));
  const FiniteRollout roll = rollout_finite(g, sol.profile);
  json res = strategy_to_json(sol.profile);
  res["degenerate_stages"] = sol.degenerate_stages;
  res["best_response_residuals"] = residuals;
  res["costs"] = roll.costs;
  const auto path = ctx.out_dir / "finite_lq.json";
  write_json_file(path, res);
  manifest.add_output(path);
  if (ctx.dump_stages) {
    const auto dump = ctx.out_dir / "finite_lq_stages.json";
    write_json_file(dump, finite_game_to_json(g));
    manifest.add_output(dump);
  }
  auto& out = *ctx.out;
  out << std::setprecision(10) << "stages: " << g.stage_count() << ", degenerate: " << sol.degenerate_stages.size()
      << "\n";
  for (int i = 0; i < g.agent_count(); ++i)
    out << "agent " << i + 1 << ": cost " << roll.costs[static_cast<std::size_t>(i)] << ", best-response residual "
        << residuals[static_cast<std::size_t>(i)] << "\n";
  manifest.finish("ok");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Trajectory output shared by train and rollout

inline void write_trajectories(RunManifest& manifest, const Environment& env,
                               const std::vector<Network>& policies, int episodes, int horizon,
                               std::uint64_t seed, const std::filesystem::path& csv_path,
                               const std::filesystem::path& svg_path, const std::string& title) {
  CsvWriter csv(csv_path, {"episode", "step", "agent", "px", "py", "cost"});
  std::vector<svg::Panel> panels(1);
  panels[0].title = title;
  panels[0].xlabel = "p_x";
  panels[0].ylabel = "p_y";
  panels[0].equal_aspect = env.name() != "lq";
  int non_finite = 0;
  const auto starts = env.sample_initial(seed, episodes);
  for (int e = 0; e < episodes; ++e) {
    const Episode ep = simulate(env, policies, starts[static_cast<std::size_t>(e)], horizon, 1.0);
    non_finite += ep.non_finite;
    for (int i = 0; i < env.agent_count(); ++i) {
      svg::Series s;
      s.color = svg::color(static_cast<std::size_t>(i));
      s.endpoints = true;
      if (e == 0) s.label = "agent " + std::to_string(i + 1);
      for (std::size_t t = 0; t < ep.states.size(); ++t) {
        const auto [px, py] = detail::agent_position(env, ep.states[t], i);
        const double c = t < ep.controls.size() ? env.cost(i, ep.states[t], ep.controls[t])
                                                : std::numeric_limits<double>::quiet_NaN();
        csv.row({static_cast<double>(e), static_cast<double>(t), static_cast<double>(i), px, py, c});
        s.x.push_back(px);
        s.y.push_back(py);
      }
      panels[0].series.push_back(std::move(s));
      if (env.name() == "lq") break;  // one shared state
    }
  }
  if (non_finite > 0) csv.comment(std::to_string(non_finite) + " episode(s) reached a non-finite state");
  manifest.add_output(csv_path);
  detail::write_svg(manifest, svg_path, panels, "");
}

/// Loads policies from a checkpoint and checks them against the environment.
inline std::vector<Network> load_policies(const std::string& stem, const Environment& env) {
  std::vector<Network> policies(static_cast<std::size_t>(env.agent_count()));
  std::vector<bool> seen(policies.size(), false);
  for (auto& nn : load_checkpoint(stem)) {
    if (nn.name.rfind("policy_", 0) != 0) continue;
    const int i = std::stoi(nn.name.substr(7));
    if (i < 0 || i >= env.agent_count())
      throw DimensionMismatch("checkpoint: " + nn.name + " has no matching agent");
    if (nn.net.input_dim() != env.state_dim() || nn.net.output_dim() != env.control_dim(i))
      throw DimensionMismatch("checkpoint: " + nn.name + " maps " + std::to_string(nn.net.input_dim()) + " -> " +
                              std::to_string(nn.net.output_dim()) + ", environment needs " +
                              std::to_string(env.state_dim()) + " -> " + std::to_string(env.control_dim(i)));
    policies[static_cast<std::size_t>(i)] = std::move(nn.net);
    seen[static_cast<std::size_t>(i)] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw DimensionMismatch("checkpoint: missing policy_" + std::to_string(i));
  return policies;
}

// ---------------------------------------------------------------------------
// train

inline int cmd_train(const CommandContext& ctx) {
  TrainRunConfig cfg = train_run_from_json(config_reader(ctx), ctx.base_dir);
  if (ctx.seed) cfg.seeds = {*ctx.seed};
  if (ctx.threads) cfg.training.threads = *ctx.threads;
  RunManifest manifest(ctx.out_dir, "train", train_run_to_json(cfg), cfg.seeds, cfg.training.numerics);
  auto& out = *ctx.out;
  const auto env = make_environment(cfg.env);

  // eval_cost per seed at each evaluated step.
  std::vector<std::vector<std::pair<double, double>>> curves;
  json per_seed = json::array();
  for (std::uint64_t seed : cfg.seeds) {
    TrainingConfig tc = cfg.training;
    tc.seed = seed;
    const auto dir = ctx.out_dir / ("seed_" + std::to_string(seed));
    std::filesystem::create_directories(dir / "checkpoints");
    const auto metrics_path = dir / "metrics.csv";
    CsvWriter csv(metrics_path, metrics_columns());
    manifest.add_output(metrics_path);
    std::map<long, double> totals;
    std::map<long, double> wall;
    TrainingOptions opt;
    opt.checkpoint_dir = (dir / "checkpoints").string();
    opt.log = &out;
    opt.on_row = [&](const MetricsRow& row) {
      csv.row(metrics_cells(row));
      if (!std::isnan(row.eval_cost)) {
        totals[row.step] += row.eval_cost;
        wall[row.step] = row.wall_ms;
      }
    };
    // Untrained policies for the before/after report: same seed, same init.
    std::mt19937_64 init_rng(seed);
    const AgentModels untrained = AgentModels::make(*env, tc, init_rng);
    TrainResult res;
    try {
      res = train(*env, tc, opt);
    } catch (const TrainingAborted& e) {
      manifest.fail(e.what());
      out << "error: " << e.what() << "\n";
      return kExitTrainingAborted;
    }
    manifest.add_output(dir / "checkpoints" / "final.json");
    manifest.add_output(dir / "checkpoints" / "final.bin");
    if (tc.checkpoint_every > 0)
      for (long s = tc.checkpoint_every; s <= tc.total_steps(); s += tc.checkpoint_every) {
        char tag[32];
        std::snprintf(tag, sizeof tag, "step_%08ld", s);
        manifest.add_output(dir / "checkpoints" / (std::string(tag) + ".json"));
        manifest.add_output(dir / "checkpoints" / (std::string(tag) + ".bin"));
      }

    std::vector<std::pair<double, double>> curve;
    for (const auto& [step, total] : totals)
      curve.emplace_back(tc.record_wall_time ? wall[step] : static_cast<double>(step), total);
    curves.push_back(curve);

    const std::uint64_t eval_seed = evaluation_seed(tc);
    const json before = environment_report(*env, untrained.policies, tc.eval_episodes, tc.eval_horizon, tc.gamma, eval_seed);
    const json after = environment_report(*env, res.models.policies, tc.eval_episodes, tc.eval_horizon, tc.gamma, eval_seed);
    const auto report_path = dir / "report.json";
    write_json_file(report_path, {{"seed", seed},
                                  {"untrained", before},
                                  {"trained", after},
                                  {"degraded_guidance", res.degraded_guidance},
                                  {"failed_rollouts", res.failed_rollouts}});
    manifest.add_output(report_path);
    write_trajectories(manifest, *env, res.models.policies, std::min(tc.eval_episodes, 4), tc.eval_horizon,
                       eval_seed, dir / "final_rollout.csv", dir / "final_rollout.svg",
                       env->name() + " trained policies, seed " + std::to_string(seed));
    per_seed.push_back({{"seed", seed},
                        {"initial_total_cost", before["total_mean_cost"]},
                        {"final_total_cost", after["total_mean_cost"]}});
    out << "seed " << seed << ": total evaluation cost " << before["total_mean_cost"].get<double>() << " -> "
        << after["total_mean_cost"].get<double>() << "\n";
  }

  // Cost curve: one line per seed plus a mean +- std band when several seeds ran.
  svg::Panel p;
  p.title = env->name();
  p.xlabel = cfg.training.record_wall_time ? "wall clock (ms)" : "gradient step";
  p.ylabel = "evaluation cost (sum over agents)";
  for (std::size_t s = 0; s < curves.size(); ++s) {
    svg::Series line;
    line.color = svg::color(s);
    line.label = "seed " + std::to_string(cfg.seeds[s]);
    for (const auto& [x, y] : curves[s]) {
      line.x.push_back(x);
      line.y.push_back(y);
    }
    p.series.push_back(line);
  }
  if (curves.size() > 1) {
    svg::Band band;
    band.color = "#444444";
    const std::size_t len = curves.front().size();
    for (std::size_t k = 0; k < len; ++k) {
      double m = 0.0, v = 0.0;
      for (const auto& c : curves) m += c[k].second / static_cast<double>(curves.size());
      for (const auto& c : curves) v += (c[k].second - m) * (c[k].second - m) / static_cast<double>(curves.size());
      band.x.push_back(curves.front()[k].first);
      band.lo.push_back(m - std::sqrt(v));
      band.hi.push_back(m + std::sqrt(v));
    }
    p.bands.push_back(band);
  }
  detail::write_svg(manifest, ctx.out_dir / "eval_cost.svg", {p}, "evaluation cost during training");
  const auto summary_path = ctx.out_dir / "train_summary.json";
  write_json_file(summary_path, {{"env", env->name()}, {"seeds", per_seed}});
  manifest.add_output(summary_path);
  manifest.finish("ok");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// rollout and eval

inline int cmd_rollout(const CommandContext& ctx) {
  EnvConfig ec = env_config_from_json(config_reader(ctx), ctx.base_dir);
  if (ctx.seed) ec.seed = *ctx.seed;
  if (ctx.checkpoint.empty()) throw ParseError("rollout: --checkpoint is required");
  if (ctx.episodes < 1 || ctx.horizon < 1) throw ParseError("rollout: episodes and horizon must be at least 1");
  RunManifest manifest(ctx.out_dir, "rollout", env_config_to_json(ec), {{"env", ec.seed}}, default_numerics());
  manifest.set("options", command_options(ctx));
  const auto env = make_environment(ec);
  const auto policies = load_policies(ctx.checkpoint, *env);
  write_trajectories(manifest, *env, policies, ctx.episodes, ctx.horizon, ec.seed, ctx.out_dir / "rollout.csv",
                     ctx.out_dir / "rollout.svg", env->name() + " rollout");
  *ctx.out << "wrote " << ctx.episodes << " episode(s) of " << ctx.horizon << " steps\n";
  manifest.finish("ok");
  return kExitOk;
}

inline int cmd_eval(const CommandContext& ctx) {
  EnvConfig ec = env_config_from_json(config_reader(ctx), ctx.base_dir);
  if (ctx.seed) ec.seed = *ctx.seed;
  if (ctx.checkpoint.empty()) throw ParseError("eval: --checkpoint is required");
  if (ctx.episodes < 1 || ctx.horizon < 1) throw ParseError("eval: episodes and horizon must be at least 1");
  RunManifest manifest(ctx.out_dir, "eval", env_config_to_json(ec), {{"env", ec.seed}}, default_numerics());
  manifest.set("options", command_options(ctx));
  const auto env = make_environment(ec);
  const auto policies = load_policies(ctx.checkpoint, *env);
  const json report = environment_report(*env, policies, ctx.episodes, ctx.horizon, 1.0, ec.seed);
  const auto path = ctx.out_dir / "eval.json";
  write_json_file(path, report);
  manifest.add_output(path);
  *ctx.out << report.dump(2) << "\n";
  manifest.finish("ok");
  return kExitOk;
}

}  // namespace magps
