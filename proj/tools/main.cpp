// Command-line entry point. See `magps --help`.

#include <CLI11.hpp>

#include <iostream>
#include <map>

#include "magps/run.hpp"

namespace {

constexpr const char* kFooter = R"(Exit codes:
  0  success
  1  usage, configuration or parse error (including checkpoint/environment mismatch)
  2  solver failure (non-convergence, non-stabilizing iterate, numerical breakdown)
  3  training aborted (more than half of a step's rollouts diverged)
  selftest exits with the number of failed suites.

Environment variables MAGPS_CONFIG, MAGPS_OUT_DIR, MAGPS_SEED and MAGPS_THREADS
supply --config, --out-dir, --seed and --threads when the flags are absent.)";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent guided policy search: LQ game solvers, guided gradient play and training"};
  app.footer(kFooter);
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir = "out", manifest_path;
  std::uint64_t seed = 0;
  int threads = 1;
  app.add_option("--config", config_path, "configuration file (JSON)")->envname("MAGPS_CONFIG");
  app.add_option("--out-dir", out_dir, "output directory")->envname("MAGPS_OUT_DIR")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", seed, "override the configured seed(s)")->envname("MAGPS_SEED");
  auto* threads_opt =
      app.add_option("--threads", threads, "worker threads for guidance solves")->envname("MAGPS_THREADS")->check(CLI::PositiveNumber);

  magps::CommandContext ctx;
  std::map<std::string, CLI::App*> subs;
  subs["lq-nash"] = app.add_subcommand("lq-nash", "solve an LQ game for its feedback Nash equilibrium");
  subs["guided-play"] = app.add_subcommand("guided-play", "gradient play with guidance weights; trajectories and phase plots");
  subs["finite-lq"] = app.add_subcommand("finite-lq", "solve a finite-horizon affine-quadratic game");
  subs["finite-lq"]->add_flag("--dump-stages", ctx.dump_stages, "also write the stage matrices");
  subs["train"] = app.add_subcommand("train", "run multi-agent guided policy search");
  subs["rollout"] = app.add_subcommand("rollout", "simulate a checkpoint; trajectory CSV and plot");
  subs["eval"] = app.add_subcommand("eval", "evaluate a checkpoint");
  for (const char* name : {"rollout", "eval"}) {
    subs[name]->add_option("--checkpoint", ctx.checkpoint, "checkpoint stem (without .json/.bin)")->required();
    subs[name]->add_option("--episodes", ctx.episodes, "number of episodes")->capture_default_str();
    subs[name]->add_option("--horizon", ctx.horizon, "steps per episode")->capture_default_str();
  }
  subs["selftest"] = app.add_subcommand("selftest", "run the invariant suites and print a pass/fail table");
  auto* replay = app.add_subcommand("replay", "re-run a command from its run manifest");
  replay->add_option("--manifest", manifest_path, "manifest.json of an earlier run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? magps::kExitOk : magps::kExitUsage;
  }

  return magps::run_guarded([&]() -> int {
    if (replay->parsed()) return magps::replay_manifest(manifest_path, out_dir);
    std::string command;
    for (const auto& [name, sub] : subs)
      if (sub->parsed()) command = name;
    ctx.out_dir = out_dir;
    if (*seed_opt) ctx.seed = seed;
    if (*threads_opt) ctx.threads = threads;
    if (command != "selftest") {
      if (config_path.empty()) {
        std::cerr << "error: " << command << " requires --config\n";
        return magps::kExitUsage;
      }
      ctx.config = magps::read_json_file(config_path);
      ctx.source = config_path;
      ctx.base_dir = std::filesystem::path(config_path).parent_path();
    }
    return magps::run_command(command, ctx);
  });
}
