#pragma once

// JSON configs and results, CSV output and run manifests.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magps/envs.hpp"
#include "magps/finite_lq.hpp"
#include "magps/guided_lq.hpp"
#include "magps/trainer.hpp"

namespace magps {

using nlohmann::json;

/// Malformed input. The message starts with the source and a location
/// (line:column for syntax errors, a JSON pointer for content errors).
class ParseError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Reading

inline json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t k = 0; k < end; ++k) {
      if (text[k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    // The library message repeats the byte offset; keep only its reason.
    std::string reason = e.what();
    if (const auto p = reason.find("error: "); p != std::string::npos) reason = reason.substr(p + 7);
    throw ParseError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + reason);
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json_text(ss.str(), path);
}

/// Typed access to a JSON value that reports failures with their location.
class JsonReader {
 public:
  JsonReader(const json& j, std::string source, std::string pointer = "")
      : j_(j), source_(std::move(source)), pointer_(std::move(pointer)) {}

  const json& value() const { return j_; }
  std::string where() const { return source_ + ": at " + (pointer_.empty() ? "/" : pointer_); }
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(where() + ": " + what); }

  bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }
  JsonReader at(const std::string& key) const {
    if (!j_.is_object()) fail("expected an object");
    if (!j_.contains(key)) fail("missing key '" + key + "'");
    return {j_.at(key), source_, pointer_ + "/" + key};
  }
  JsonReader at(std::size_t k) const {
    if (!j_.is_array() || k >= j_.size()) fail("index " + std::to_string(k) + " out of range");
    return {j_.at(k), source_, pointer_ + "/" + std::to_string(k)};
  }
  std::size_t size() const {
    if (!j_.is_array()) fail("expected an array");
    return j_.size();
  }

  /// Rejects keys outside `allowed`, which catches misspelled options.
  void only(const std::set<std::string>& allowed) const {
    if (!j_.is_object()) fail("expected an object");
    for (const auto& [key, _] : j_.items())
      if (!allowed.count(key)) fail("unknown key '" + key + "'");
  }

  double number() const {
    if (!j_.is_number()) fail("expected a number");
    const double v = j_.get<double>();
    if (!std::isfinite(v)) fail("expected a finite number");
    return v;
  }
  long integer() const {
    if (!j_.is_number_integer()) fail("expected an integer");
    return j_.get<long>();
  }
  std::uint64_t unsigned_integer() const {
    if (!j_.is_number_unsigned() && !(j_.is_number_integer() && j_.get<long>() >= 0))
      fail("expected a nonnegative integer");
    return j_.get<std::uint64_t>();
  }
  bool boolean() const {
    if (!j_.is_boolean()) fail("expected true or false");
    return j_.get<bool>();
  }
  std::string string() const {
    if (!j_.is_string()) fail("expected a string");
    return j_.get<std::string>();
  }
  Vector vector() const {
    Vector v(static_cast<Eigen::Index>(size()));
    for (std::size_t k = 0; k < size(); ++k) v(static_cast<Eigen::Index>(k)) = at(k).number();
    return v;
  }
  std::vector<double> numbers() const {
    std::vector<double> v;
    for (std::size_t k = 0; k < size(); ++k) v.push_back(at(k).number());
    return v;
  }
  std::vector<int> integers() const {
    std::vector<int> v;
    for (std::size_t k = 0; k < size(); ++k) v.push_back(static_cast<int>(at(k).integer()));
    return v;
  }
  /// Row-major nested array.
  Matrix matrix() const {
    const std::size_t rows = size();
    if (rows == 0) fail("expected a non-empty matrix");
    const std::size_t cols = at(0).size();
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
      const JsonReader row = at(r);
      if (row.size() != cols) row.fail("ragged matrix row");
      for (std::size_t c = 0; c < cols; ++c)
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row.at(c).number();
    }
    return m;
  }
  std::vector<Matrix> matrices() const {
    std::vector<Matrix> out;
    for (std::size_t k = 0; k < size(); ++k) out.push_back(at(k).matrix());
    return out;
  }

  double number_or(const std::string& key, double fallback) const {
    return has(key) ? at(key).number() : fallback;
  }
  long integer_or(const std::string& key, long fallback) const {
    return has(key) ? at(key).integer() : fallback;
  }

 private:
  const json& j_;
  std::string source_;
  std::string pointer_;
};

// ---------------------------------------------------------------------------
// Writing

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline json to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(v(k));
  return out;
}

inline json to_json(const std::vector<Matrix>& ms) {
  json out = json::array();
  for (const auto& m : ms) out.push_back(to_json(m));
  return out;
}

inline json to_json(const FeedbackProfile& K) { return to_json(K.gains); }

inline json complex_to_json(const std::vector<std::complex<double>>& values) {
  json out = json::array();
  for (const auto& v : values) out.push_back({v.real(), v.imag()});
  return out;
}

/// Round-trip exact decimal text for doubles.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes `text` to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns)
      : columns_(columns.size()) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary);
    if (!out_) throw Error("cannot write " + path.string());
    row_strings(columns);
  }

  void comment(const std::string& text) { out_ << "# " << text << "\n"; }

  void row(const std::vector<double>& values) {
    std::vector<std::string> cells;
    for (double v : values) cells.push_back(format_double(v));
    row_strings(cells);
  }

  void row_strings(const std::vector<std::string>& cells) {
    require(cells.size() == columns_, "csv: row width does not match the header");
    for (std::size_t k = 0; k < cells.size(); ++k) out_ << (k ? "," : "") << cells[k];
    out_ << "\n";
  }

 private:
  std::size_t columns_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Games

inline LinearQuadraticGame game_from_json(const JsonReader& r) {
  r.only({"A", "B", "Q", "R", "sigma0", "initial_states", "name", "comment"});
  LinearQuadraticGame g;
  g.A = r.at("A").matrix();
  g.B = r.at("B").matrices();
  g.Q = r.at("Q").matrices();
  g.R = r.at("R").matrices();
  if (r.has("initial_states")) {
    const JsonReader list = r.at("initial_states");
    for (std::size_t k = 0; k < list.size(); ++k) {
      const JsonReader s = list.at(k);
      s.only({"x", "p"});
      g.initial_states.push_back({s.at("x").vector(), s.at("p").number()});
    }
    if (g.initial_states.empty()) list.fail("expected at least one initial state");
  }
  if (r.has("sigma0")) {
    g.sigma0 = r.at("sigma0").matrix();
  } else if (!g.initial_states.empty()) {
    for (const auto& s : g.initial_states)
      if (s.x.size() != g.A.rows()) r.at("initial_states").fail("state dimension mismatch");
    g.sigma0 = LinearQuadraticGame::second_moment(g.initial_states);
  } else {
    r.fail("one of 'sigma0' or 'initial_states' is required");
  }
  try {
    g.validate();
  } catch (const Error& e) {
    r.fail(e.what());
  }
  return g;
}

inline json game_to_json(const LinearQuadraticGame& g) {
  json j;
  j["A"] = to_json(g.A);
  j["B"] = to_json(g.B);
  j["Q"] = to_json(g.Q);
  j["R"] = to_json(g.R);
  if (g.initial_states.empty()) {
    j["sigma0"] = to_json(g.sigma0);
  } else {
    json list = json::array();
    for (const auto& s : g.initial_states) list.push_back({{"x", to_json(s.x)}, {"p", s.probability}});
    j["initial_states"] = list;
  }
  return j;
}

inline FeedbackProfile profile_from_json(const JsonReader& r, const LinearQuadraticGame& g) {
  FeedbackProfile K;
  K.gains = r.matrices();
  try {
    check_profile(g, K);
  } catch (const Error& e) {
    r.fail(e.what());
  }
  return K;
}

inline NumericsConfig numerics_from_json(const JsonReader& r) {
  r.only({"lyapunov_tolerance", "lyapunov_max_doublings", "stability_margin",
          "nash_step_tolerance", "nash_max_sweeps", "nash_residual_tolerance", "jacobian_step",
          "degenerate_condition", "state_cost_floor", "control_cost_floor"});
  NumericsConfig c;
  c.lyapunov_tolerance = r.number_or("lyapunov_tolerance", c.lyapunov_tolerance);
  c.lyapunov_max_doublings = static_cast<int>(r.integer_or("lyapunov_max_doublings", c.lyapunov_max_doublings));
  c.stability_margin = r.number_or("stability_margin", c.stability_margin);
  c.nash_step_tolerance = r.number_or("nash_step_tolerance", c.nash_step_tolerance);
  c.nash_max_sweeps = static_cast<int>(r.integer_or("nash_max_sweeps", c.nash_max_sweeps));
  c.nash_residual_tolerance = r.number_or("nash_residual_tolerance", c.nash_residual_tolerance);
  c.jacobian_step = r.number_or("jacobian_step", c.jacobian_step);
  c.degenerate_condition = r.number_or("degenerate_condition", c.degenerate_condition);
  c.state_cost_floor = r.number_or("state_cost_floor", c.state_cost_floor);
  c.control_cost_floor = r.number_or("control_cost_floor", c.control_cost_floor);
  return c;
}

inline json numerics_to_json(const NumericsConfig& c) {
  return {{"lyapunov_tolerance", c.lyapunov_tolerance},
          {"lyapunov_max_doublings", c.lyapunov_max_doublings},
          {"stability_margin", c.stability_margin},
          {"nash_step_tolerance", c.nash_step_tolerance},
          {"nash_max_sweeps", c.nash_max_sweeps},
          {"nash_residual_tolerance", c.nash_residual_tolerance},
          {"jacobian_step", c.jacobian_step},
          {"degenerate_condition", c.degenerate_condition},
          {"state_cost_floor", c.state_cost_floor},
          {"control_cost_floor", c.control_cost_floor}};
}

/// A game given inline under `key`, or by path under `key + "_file"`
/// (relative to the referencing file).
inline LinearQuadraticGame game_reference(const JsonReader& r, const std::string& key,
                                          const std::filesystem::path& base_dir) {
  if (r.has(key + "_file")) {
    const auto path = base_dir / r.at(key + "_file").string();
    const json j = read_json_file(path.string());
    return game_from_json(JsonReader(j, path.string()));
  }
  return game_from_json(r.at(key));
}

// ---------------------------------------------------------------------------
// Guided gradient play

struct GuidedPlayConfig {
  LinearQuadraticGame game;
  std::vector<double> rho;
  double guide_bias = 0.1;
  std::optional<FeedbackProfile> guide;  // overrides guide_bias
  double eta = 0.4;
  long steps = 600000;
  long record_every = 100;
  std::optional<FeedbackProfile> k0;  // explicit start; otherwise K* + perturbation
  double perturbation_norm = 0.05;
  std::uint64_t seed = 1;
  double converged_tolerance = 1e-5;
  std::vector<double> eta_per_rho;  // optional per-rho step sizes
  NumericsConfig numerics;

  double step_size(std::size_t k) const { return eta_per_rho.empty() ? eta : eta_per_rho[k]; }
};

inline GuidedPlayConfig guided_play_from_json(const JsonReader& r,
                                              const std::filesystem::path& base_dir) {
  r.only({"game", "game_file", "rho", "guide_bias", "guide", "eta", "eta_per_rho", "steps",
          "record_every", "k0", "perturbation_norm", "seed", "converged_tolerance", "numerics",
          "comment"});
  GuidedPlayConfig c;
  c.game = game_reference(r, "game", base_dir);
  c.rho = r.at("rho").numbers();
  if (c.rho.empty()) r.at("rho").fail("at least one guidance weight is required");
  for (double v : c.rho)
    if (v < 0.0) r.at("rho").fail("guidance weights must be nonnegative");
  c.guide_bias = r.number_or("guide_bias", c.guide_bias);
  if (r.has("guide")) c.guide = profile_from_json(r.at("guide"), c.game);
  c.eta = r.number_or("eta", c.eta);
  if (r.has("eta_per_rho")) {
    c.eta_per_rho = r.at("eta_per_rho").numbers();
    if (c.eta_per_rho.size() != c.rho.size())
      r.at("eta_per_rho").fail("needs one step size per guidance weight");
  }
  if (!(c.eta > 0.0)) r.at("eta").fail("eta must be positive");
  c.steps = r.integer_or("steps", c.steps);
  if (c.steps < 1) r.at("steps").fail("steps must be at least 1");
  c.record_every = r.integer_or("record_every", c.record_every);
  if (c.record_every < 1) r.at("record_every").fail("record_every must be at least 1");
  if (r.has("k0")) c.k0 = profile_from_json(r.at("k0"), c.game);
  c.perturbation_norm = r.number_or("perturbation_norm", c.perturbation_norm);
  if (r.has("seed")) c.seed = r.at("seed").unsigned_integer();
  c.converged_tolerance = r.number_or("converged_tolerance", c.converged_tolerance);
  if (r.has("numerics")) c.numerics = numerics_from_json(r.at("numerics"));
  return c;
}

inline json guided_play_to_json(const GuidedPlayConfig& c) {
  json j;
  j["game"] = game_to_json(c.game);
  j["rho"] = c.rho;
  j["guide_bias"] = c.guide_bias;
  if (c.guide) j["guide"] = to_json(*c.guide);
  j["eta"] = c.eta;
  if (!c.eta_per_rho.empty()) j["eta_per_rho"] = c.eta_per_rho;
  j["steps"] = c.steps;
  j["record_every"] = c.record_every;
  if (c.k0) j["k0"] = to_json(*c.k0);
  j["perturbation_norm"] = c.perturbation_norm;
  j["seed"] = c.seed;
  j["converged_tolerance"] = c.converged_tolerance;
  j["numerics"] = numerics_to_json(c.numerics);
  return j;
}

/// K + a random direction of the given Frobenius norm (seeded).
inline FeedbackProfile perturbed_profile(const FeedbackProfile& K, double norm, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector dir = K.flatten();
  for (Eigen::Index k = 0; k < dir.size(); ++k) dir(k) = normal(rng);
  if (dir.norm() == 0.0 || norm == 0.0) return K;
  return K.unflatten(K.flatten() + norm * dir / dir.norm());
}

// ---------------------------------------------------------------------------
// Finite-horizon games

inline FiniteHorizonLQGame finite_game_from_json(const JsonReader& r,
                                                 const std::filesystem::path& base_dir) {
  if (r.has("game") || r.has("game_file")) {
    r.only({"game", "game_file", "horizon", "x0", "comment"});
    const auto g = game_reference(r, "game", base_dir);
    const long T = r.at("horizon").integer();
    if (T < 0) r.at("horizon").fail("horizon must be nonnegative");
    const Vector x0 = r.has("x0") ? r.at("x0").vector() : Vector(Vector::Ones(g.state_dim()));
    if (x0.size() != g.state_dim()) r.at("x0").fail("state dimension mismatch");
    return FiniteHorizonLQGame::lift(g, static_cast<int>(T), x0);
  }
  r.only({"horizon", "x0", "A", "B", "Q", "q", "R", "r", "comment"});
  FiniteHorizonLQGame f;
  f.horizon = static_cast<int>(r.at("horizon").integer());
  f.x0 = r.at("x0").vector();
  f.A = r.at("A").matrices();
  auto per_stage_matrices = [&](const char* key) {
    std::vector<std::vector<Matrix>> out;
    const JsonReader list = r.at(key);
    for (std::size_t t = 0; t < list.size(); ++t) out.push_back(list.at(t).matrices());
    return out;
  };
  auto per_stage_vectors = [&](const char* key) {
    std::vector<std::vector<Vector>> out;
    const JsonReader list = r.at(key);
    for (std::size_t t = 0; t < list.size(); ++t) {
      std::vector<Vector> stage;
      for (std::size_t i = 0; i < list.at(t).size(); ++i) stage.push_back(list.at(t).at(i).vector());
      out.push_back(stage);
    }
    return out;
  };
  f.B = per_stage_matrices("B");
  f.Q = per_stage_matrices("Q");
  f.R = per_stage_matrices("R");
  f.q = per_stage_vectors("q");
  f.r = per_stage_vectors("r");
  try {
    f.validate();
  } catch (const Error& e) {
    r.fail(e.what());
  }
  return f;
}

inline json finite_game_to_json(const FiniteHorizonLQGame& f) {
  json j;
  j["horizon"] = f.horizon;
  j["x0"] = to_json(f.x0);
  j["A"] = to_json(f.A);
  json B = json::array(), Q = json::array(), R = json::array(), q = json::array(), r = json::array();
  for (int t = 0; t < f.stage_count(); ++t) {
    const auto ut = static_cast<std::size_t>(t);
    B.push_back(to_json(f.B[ut]));
    Q.push_back(to_json(f.Q[ut]));
    R.push_back(to_json(f.R[ut]));
    json qs = json::array(), rs = json::array();
    for (const auto& v : f.q[ut]) qs.push_back(to_json(v));
    for (const auto& v : f.r[ut]) rs.push_back(to_json(v));
    q.push_back(qs);
    r.push_back(rs);
  }
  j["B"] = B;
  j["Q"] = Q;
  j["q"] = q;
  j["R"] = R;
  j["r"] = r;
  return j;
}

inline json strategy_to_json(const AffineStrategyProfile& p) {
  json K = json::array(), k = json::array();
  for (std::size_t t = 0; t < p.K.size(); ++t) {
    K.push_back(to_json(p.K[t]));
    json ks = json::array();
    for (const auto& v : p.k[t]) ks.push_back(to_json(v));
    k.push_back(ks);
  }
  return {{"K", K}, {"k", k}};
}

// ---------------------------------------------------------------------------
// Environments and training

struct EnvConfig {
  std::string env = "lq";
  double dt = 0.1;
  std::optional<Vector> init_layout;
  double jitter = 0.1;
  std::uint64_t seed = 0;
  LinearQuadraticGame game = reference_game();  // for "lq"
};

inline EnvConfig env_config_from_json(const JsonReader& r, const std::filesystem::path& base_dir) {
  r.only({"env", "dt", "init_layout", "jitter", "seed", "game", "game_file", "comment"});
  EnvConfig c;
  c.env = r.at("env").string();
  if (c.env != "lq" && c.env != "platooning" && c.env != "basketball")
    r.at("env").fail("env must be one of lq, platooning, basketball");
  c.dt = r.number_or("dt", c.dt);
  if (!(c.dt > 0.0)) r.at("dt").fail("dt must be positive");
  if (r.has("init_layout")) c.init_layout = r.at("init_layout").vector();
  c.jitter = r.number_or("jitter", c.jitter);
  if (c.jitter < 0.0) r.at("jitter").fail("jitter must be nonnegative");
  if (r.has("seed")) c.seed = r.at("seed").unsigned_integer();
  if (r.has("game") || r.has("game_file")) c.game = game_reference(r, "game", base_dir);
  const int n = c.env == "platooning" ? 12 : c.env == "basketball" ? 24 : c.game.state_dim();
  if (c.init_layout && c.init_layout->size() != n)
    r.at("init_layout").fail("layout must have " + std::to_string(n) + " entries");
  if (c.env == "lq" && c.init_layout) r.at("init_layout").fail("the lq env samples from its game");
  return c;
}

inline json env_config_to_json(const EnvConfig& c) {
  json j{{"env", c.env}, {"dt", c.dt}, {"jitter", c.jitter}, {"seed", c.seed}};
  if (c.init_layout) j["init_layout"] = to_json(*c.init_layout);
  if (c.env == "lq") j["game"] = game_to_json(c.game);
  return j;
}

inline std::unique_ptr<Environment> make_environment(const EnvConfig& c) {
  if (c.env == "lq") return std::make_unique<LqEnv>(c.game);
  if (c.env == "platooning") {
    InitialLayout layout = PlatooningEnv::default_layout();
    if (c.init_layout) layout.nominal = *c.init_layout;
    layout.jitter = c.jitter;
    return std::make_unique<PlatooningEnv>(c.dt, layout);
  }
  InitialLayout layout = BasketballEnv::default_layout();
  if (c.init_layout) layout.nominal = *c.init_layout;
  layout.jitter = c.jitter;
  return std::make_unique<BasketballEnv>(c.dt, layout);
}

inline TrainingConfig training_config_from_json(const JsonReader& r) {
  r.only({"eta", "rho_schedule", "rho0", "rho_decay", "epochs", "steps_per_epoch",
          "rollouts_per_step", "batch_size", "rollout_length", "gamma", "guidance_horizon", "seed",
          "buffer_capacity", "policy_hidden", "value_hidden", "optimizer", "shared_batch",
          "guidance_cache", "eval_every", "eval_episodes", "eval_horizon", "checkpoint_every",
          "record_wall_time", "threads", "numerics"});
  TrainingConfig c;
  auto integer = [&](const char* key, int& field) {
    if (r.has(key)) field = static_cast<int>(r.at(key).integer());
  };
  c.eta = r.number_or("eta", c.eta);
  if (r.has("rho_schedule")) c.rho_schedule = r.at("rho_schedule").numbers();
  c.rho0 = r.number_or("rho0", c.rho0);
  c.rho_decay = r.number_or("rho_decay", c.rho_decay);
  integer("epochs", c.epochs);
  integer("steps_per_epoch", c.steps_per_epoch);
  integer("rollouts_per_step", c.rollouts_per_step);
  integer("batch_size", c.batch_size);
  integer("rollout_length", c.rollout_length);
  c.gamma = r.number_or("gamma", c.gamma);
  integer("guidance_horizon", c.guidance_horizon);
  if (r.has("seed")) c.seed = r.at("seed").unsigned_integer();
  integer("buffer_capacity", c.buffer_capacity);
  if (r.has("policy_hidden")) c.policy_hidden = r.at("policy_hidden").integers();
  if (r.has("value_hidden")) c.value_hidden = r.at("value_hidden").integers();
  if (r.has("optimizer")) c.optimizer = r.at("optimizer").string();
  if (r.has("shared_batch")) c.shared_batch = r.at("shared_batch").boolean();
  if (r.has("guidance_cache")) {
    const std::string s = r.at("guidance_cache").string();
    if (s == "per_batch") c.guidance_cache = GuidanceCache::PerBatch;
    else if (s == "per_epoch") c.guidance_cache = GuidanceCache::PerEpoch;
    else r.at("guidance_cache").fail("expected per_batch or per_epoch");
  }
  integer("eval_every", c.eval_every);
  integer("eval_episodes", c.eval_episodes);
  integer("eval_horizon", c.eval_horizon);
  integer("checkpoint_every", c.checkpoint_every);
  if (r.has("record_wall_time")) c.record_wall_time = r.at("record_wall_time").boolean();
  integer("threads", c.threads);
  if (r.has("numerics")) c.numerics = numerics_from_json(r.at("numerics"));
  for (int h : c.policy_hidden)
    if (h < 1) r.at("policy_hidden").fail("layer widths must be positive");
  for (int h : c.value_hidden)
    if (h < 1) r.at("value_hidden").fail("layer widths must be positive");
  try {
    c.validate();
  } catch (const Error& e) {
    r.fail(e.what());
  }
  return c;
}

inline json training_config_to_json(const TrainingConfig& c) {
  return {{"eta", c.eta},
          {"rho_schedule", c.schedule()},
          {"rho0", c.rho0},
          {"rho_decay", c.rho_decay},
          {"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"rollouts_per_step", c.rollouts_per_step},
          {"batch_size", c.batch_size},
          {"rollout_length", c.rollout_length},
          {"gamma", c.gamma},
          {"guidance_horizon", c.guidance_horizon},
          {"seed", c.seed},
          {"buffer_capacity", c.buffer_capacity},
          {"policy_hidden", c.policy_hidden},
          {"value_hidden", c.value_hidden},
          {"optimizer", c.optimizer},
          {"shared_batch", c.shared_batch},
          {"guidance_cache", c.guidance_cache == GuidanceCache::PerBatch ? "per_batch" : "per_epoch"},
          {"eval_every", c.eval_every},
          {"eval_episodes", c.eval_episodes},
          {"eval_horizon", c.eval_horizon},
          {"checkpoint_every", c.checkpoint_every},
          {"record_wall_time", c.record_wall_time},
          {"threads", c.threads},
          {"numerics", numerics_to_json(c.numerics)}};
}

/// A training run: environment, trainer settings and the seeds to run.
struct TrainRunConfig {
  EnvConfig env;
  TrainingConfig training;
  std::vector<std::uint64_t> seeds;  // one run per seed; defaults to training.seed
};

inline TrainRunConfig train_run_from_json(const JsonReader& r, const std::filesystem::path& base_dir) {
  r.only({"env", "training", "seeds", "comment"});
  TrainRunConfig c;
  c.env = env_config_from_json(r.at("env"), base_dir);
  c.training = training_config_from_json(r.has("training") ? r.at("training") : JsonReader(json::object(), "defaults"));
  if (r.has("seeds")) {
    const JsonReader list = r.at("seeds");
    for (std::size_t k = 0; k < list.size(); ++k) c.seeds.push_back(list.at(k).unsigned_integer());
    if (c.seeds.empty()) list.fail("at least one seed is required");
  } else {
    c.seeds.push_back(c.training.seed);
  }
  return c;
}

inline json train_run_to_json(const TrainRunConfig& c) {
  return {{"env", env_config_to_json(c.env)},
          {"training", training_config_to_json(c.training)},
          {"seeds", c.seeds}};
}

inline std::vector<std::string> metrics_columns() {
  return {"step", "agent", "policy_loss", "bellman_error", "guidance_dev", "eval_cost", "rho", "wall_ms"};
}

inline std::vector<double> metrics_cells(const MetricsRow& row) {
  return {static_cast<double>(row.step), static_cast<double>(row.agent), row.policy_loss,
          row.bellman_error, row.guidance_dev, row.eval_cost, row.rho, row.wall_ms};
}

// ---------------------------------------------------------------------------
// Run manifests

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

#ifndef MAGPS_GIT_DESCRIBE
#define MAGPS_GIT_DESCRIBE "unknown"
#endif

/// Written before any result and rewritten on completion. `config` is the
/// fully resolved configuration, so replaying it reproduces the outputs.
class RunManifest {
 public:
  RunManifest(std::filesystem::path dir, std::string command, json config, json seeds,
              const NumericsConfig& numerics)
      : dir_(std::move(dir)) {
    doc_["format"] = "magps-manifest-1";
    doc_["command"] = std::move(command);
    doc_["config"] = std::move(config);
    doc_["seeds"] = std::move(seeds);
    doc_["numerics"] = numerics_to_json(numerics);
    doc_["git_describe"] = MAGPS_GIT_DESCRIBE;
    doc_["started"] = utc_timestamp();
    doc_["finished"] = nullptr;
    doc_["status"] = "running";
    doc_["outputs"] = json::array();
    save();
  }

  static std::filesystem::path path_in(const std::filesystem::path& dir) {
    return dir / "manifest.json";
  }

  /// Records an output file, relative to the run directory.
  void add_output(const std::filesystem::path& p) {
    doc_["outputs"].push_back(std::filesystem::relative(p, dir_).generic_string());
  }

  void set(const std::string& key, json value) { doc_[key] = std::move(value); }

  void finish(const std::string& status) {
    doc_["finished"] = utc_timestamp();
    doc_["status"] = status;
    for (const auto& rel : doc_["outputs"])
      if (!std::filesystem::exists(dir_ / rel.get<std::string>()))
        throw Error("manifest: output " + rel.get<std::string>() + " was not written");
    save();
  }

  /// Records a failure; outputs may be incomplete.
  void fail(const std::string& why) {
    doc_["finished"] = utc_timestamp();
    doc_["status"] = "failed";
    doc_["error"] = why;
    save();
  }

  const json& document() const { return doc_; }

 private:
  void save() const { write_json_file(path_in(dir_), doc_); }

  std::filesystem::path dir_;
  json doc_;
};

}  // namespace magps
