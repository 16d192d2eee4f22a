#pragma once

// Command dispatch and replay of a recorded run from its manifest.

#include <filesystem>
#include <iostream>
#include <string>

#include "magps/commands.hpp"
#include "magps/selftest.hpp"

namespace magps {

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"lq-nash", "guided-play", "finite-lq", "train",
                                              "rollout", "eval",        "selftest"};
  return names;
}

inline int run_command(const std::string& name, const CommandContext& ctx) {
  if (name == "lq-nash") return cmd_lq_nash(ctx);
  if (name == "guided-play") return cmd_guided_play(ctx);
  if (name == "finite-lq") return cmd_finite_lq(ctx);
  if (name == "train") return cmd_train(ctx);
  if (name == "rollout") return cmd_rollout(ctx);
  if (name == "eval") return cmd_eval(ctx);
  if (name == "selftest") return cmd_selftest(ctx);
  throw ParseError("unknown command '" + name + "'");
}

/// Re-executes the command recorded in a manifest with its embedded,
/// fully resolved configuration, writing into `out_dir`.
inline int replay_manifest(const std::string& manifest_path, const std::filesystem::path& out_dir,
                           std::ostream& out = std::cout) {
  const json doc = read_json_file(manifest_path);
  const JsonReader r(doc, manifest_path);
  if (!r.has("format") || r.at("format").string() != "magps-manifest-1")
    r.fail("not a run manifest");
  CommandContext ctx;
  ctx.config = doc.at("config");
  ctx.source = manifest_path + "#/config";
  ctx.base_dir = std::filesystem::path(manifest_path).parent_path();
  ctx.out_dir = out_dir;
  ctx.out = &out;
  if (r.has("options")) {
    const JsonReader o = r.at("options");
    ctx.episodes = static_cast<int>(o.integer_or("episodes", ctx.episodes));
    ctx.horizon = static_cast<int>(o.integer_or("horizon", ctx.horizon));
    if (o.has("dump_stages")) ctx.dump_stages = o.at("dump_stages").boolean();
    if (o.has("checkpoint")) ctx.checkpoint = o.at("checkpoint").string();
  }
  return run_command(r.at("command").string(), ctx);
}

/// Runs `body` and maps escaping exceptions to exit codes, printing the
/// message to `err`.
template <class F>
int run_guarded(F&& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DimensionMismatch& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingAborted& e) {
    err << "error: " << e.what() << "\n";
    return kExitTrainingAborted;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitSolver;
  }
}

}  // namespace magps
