#pragma once

// Multi-agent guided policy search: rollouts into a replay buffer, per-agent
// policy updates on the guided one-step surrogate, semi-gradient Bellman
// updates for the value networks, and evaluation.

#include <chrono>
#include <cstdio>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "magps/envs.hpp"
#include "magps/local_lq.hpp"
#include "magps/net.hpp"
#include "magps/parallel.hpp"

namespace magps {

class TrainingAborted : public Error {
 public:
  using Error::Error;
};

struct Trajectory {
  std::vector<Vector> states;    // x_0 .. x_{T_r}
  std::vector<Vector> controls;  // u_0 .. u_{T_r}
  Vector terminal;               // x_{T_r + 1}
  std::uint64_t id = 0;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw Error("replay buffer: capacity must be at least 1");
  }

  void push(Trajectory traj) {
    traj.id = insertions_++;
    states_ += traj.states.size();
    trajectories_.push_back(std::move(traj));
    while (trajectories_.size() > capacity_) {
      states_ -= trajectories_.front().states.size();
      trajectories_.pop_front();
    }
  }

  std::size_t size() const { return trajectories_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t state_count() const { return states_; }
  std::uint64_t insertions() const { return insertions_; }
  const std::deque<Trajectory>& trajectories() const { return trajectories_; }

  /// `count` states drawn uniformly (with replacement) over every stored
  /// state, as columns. `keys` receives a stable identifier per draw.
  Matrix sample_states(std::mt19937_64& rng, int count,
                       std::vector<std::uint64_t>* keys = nullptr) const {
    if (states_ == 0) throw Error("replay buffer: cannot sample from an empty buffer");
    std::uniform_int_distribution<std::size_t> pick(0, states_ - 1);
    const auto n = trajectories_.front().states.front().size();
    Matrix X(n, count);
    if (keys) keys->clear();
    for (int j = 0; j < count; ++j) {
      std::size_t k = pick(rng);
      for (const auto& traj : trajectories_) {
        if (k < traj.states.size()) {
          X.col(j) = traj.states[k];
          if (keys) keys->push_back((traj.id << 24) | k);
          break;
        }
        k -= traj.states.size();
      }
    }
    return X;
  }

 private:
  std::size_t capacity_;
  std::deque<Trajectory> trajectories_;
  std::size_t states_ = 0;
  std::uint64_t insertions_ = 0;
};

enum class GuidanceCache { PerBatch, PerEpoch };

struct TrainingConfig {
  double eta = 1e-3;
  std::vector<double> rho_schedule;  // one weight per epoch; generated when empty
  double rho0 = 1.0;
  double rho_decay = 0.8;
  int epochs = 10;
  int steps_per_epoch = 100;
  int rollouts_per_step = 4;
  int batch_size = 64;
  int rollout_length = 50;
  double gamma = 0.99;
  int guidance_horizon = 20;
  std::uint64_t seed = 0;
  int buffer_capacity = 200;
  std::vector<int> policy_hidden{64, 64};
  std::vector<int> value_hidden{64, 64};
  std::string optimizer = "adam";
  bool shared_batch = true;
  GuidanceCache guidance_cache = GuidanceCache::PerBatch;
  int eval_every = 50;
  int eval_episodes = 8;
  int eval_horizon = 50;
  int checkpoint_every = 0;
  bool record_wall_time = false;
  int threads = 1;
  NumericsConfig numerics = default_numerics();

  long total_steps() const { return static_cast<long>(epochs) * steps_per_epoch; }

  std::vector<double> schedule() const {
    if (!rho_schedule.empty()) return rho_schedule;
    std::vector<double> s;
    double rho = rho0;
    for (int k = 0; k < epochs; ++k, rho *= rho_decay) s.push_back(rho);
    return s;
  }

  void validate() const {
    auto positive = [](long v, const char* what) {
      if (v < 1) throw Error(std::string("training config: ") + what + " must be at least 1");
    };
    positive(epochs, "epochs");
    positive(steps_per_epoch, "steps_per_epoch");
    positive(rollouts_per_step, "rollouts_per_step");
    positive(batch_size, "batch_size");
    positive(rollout_length, "rollout_length");
    positive(guidance_horizon, "guidance_horizon");
    positive(buffer_capacity, "buffer_capacity");
    positive(eval_episodes, "eval_episodes");
    positive(eval_horizon, "eval_horizon");
    positive(threads, "threads");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw Error("training config: gamma must be in (0, 1]");
    if (!(eta >= 0.0)) throw Error("training config: eta must be nonnegative");
    const auto s = schedule();
    if (static_cast<int>(s.size()) != epochs)
      throw Error("training config: rho_schedule must have one entry per epoch");
    for (double r : s)
      if (!(r >= 0.0)) throw Error("training config: rho values must be nonnegative");
    optimizer_from_string(optimizer);
  }
};

struct AgentModels {
  std::vector<Network> policies;
  std::vector<Network> values;
  std::vector<OptimizerState> policy_opt;
  std::vector<OptimizerState> value_opt;

  static AgentModels make(const Environment& env, const TrainingConfig& cfg,
                          std::mt19937_64& rng) {
    AgentModels m;
    const auto kind = optimizer_from_string(cfg.optimizer);
    for (int i = 0; i < env.agent_count(); ++i)
      m.policies.push_back(
          Network::make(env.state_dim(), cfg.policy_hidden, env.control_dim(i), rng));
    for (int i = 0; i < env.agent_count(); ++i)
      m.values.push_back(Network::make(env.state_dim(), cfg.value_hidden, 1, rng));
    OptimizerState s;
    s.kind = kind;
    m.policy_opt.assign(static_cast<std::size_t>(env.agent_count()), s);
    m.value_opt.assign(static_cast<std::size_t>(env.agent_count()), s);
    return m;
  }
};

/// Joint actions of every agent's policy on a batch of states (m x batch).
inline Matrix joint_actions(const Environment& env, const std::vector<Network>& policies,
                            const Matrix& X) {
  require(static_cast<int>(policies.size()) == env.agent_count(),
          "joint_actions: one policy per agent required");
  Matrix U(env.total_control_dim(), X.cols());
  for (int i = 0; i < env.agent_count(); ++i)
    U.middleRows(env.control_offset(i), env.control_dim(i)) =
        policies[static_cast<std::size_t>(i)].forward(X);
  return U;
}

inline JointPolicy make_joint_policy(const Environment& env, const std::vector<Network>& policies) {
  return [&env, &policies](const Vector& x) -> Vector {
    return joint_actions(env, policies, Matrix(x)).col(0);
  };
}

/// Jacobian of the joint policy at x (m x n).
inline Matrix policy_jacobian(const Environment& env, const std::vector<Network>& policies,
                              const Vector& x) {
  Matrix J(env.total_control_dim(), env.state_dim());
  for (int i = 0; i < env.agent_count(); ++i) {
    const auto& net = policies[static_cast<std::size_t>(i)];
    const int m = net.output_dim();
    ForwardCache cache;
    net.forward(x.replicate(1, m), cache);
    const Matrix dx = net.backward(cache, Matrix::Identity(m, m)).dx;
    J.middleRows(env.control_offset(i), m) = dx.transpose();
  }
  return J;
}

// Value functions used by the policy and value updates. Any type with
// values(X) -> batch vector and input_gradients(X) -> (n x batch) works.

struct NetworkValue {
  const Network& net;
  Vector values(const Matrix& X) const { return net.forward(X).row(0).transpose(); }
  Matrix input_gradients(const Matrix& X) const {
    ForwardCache cache;
    net.forward(X, cache);
    return net.backward(cache, Matrix::Ones(1, X.cols())).dx;
  }
};

/// V(x) = x' P x.
struct QuadraticValue {
  Matrix P;
  Vector values(const Matrix& X) const {
    return (X.array() * (P * X).array()).colwise().sum().transpose();
  }
  Matrix input_gradients(const Matrix& X) const { return (P + P.transpose()) * X; }
};

struct PolicyGradient {
  Vector grad;              // flattened, summed over the batch
  double loss = 0.0;        // batch mean of the surrogate
  double guidance_dev = 0;  // batch mean of ||u^i - u_check^i||
};

/// Gradient of sum_j [c_rho^i(x_j, pi(x_j)) + gamma V^i(f(x_j, pi(x_j)))]
/// with respect to agent i's policy parameters. Other agents' policies, the
/// value function and the guidance (m x batch) are held fixed.
template <class ValueFn>
PolicyGradient policy_gradient(const Environment& env, int i, const std::vector<Network>& policies,
                               const ValueFn& value, const Matrix& X, const Matrix& guidance,
                               double rho, double gamma) {
  require(X.cols() > 0, "policy_gradient: empty batch");
  require(guidance.rows() == env.total_control_dim() && guidance.cols() == X.cols(),
          "policy_gradient: guidance shape mismatch");
  const auto ui = static_cast<std::size_t>(i);
  const Eigen::Index B = X.cols();
  const int off = env.control_offset(i), mi = env.control_dim(i);

  ForwardCache cache;
  Matrix U = joint_actions(env, policies, X);
  U.middleRows(off, mi) = policies[ui].forward(X, cache);

  Matrix Xn(X.rows(), B);
  for (Eigen::Index j = 0; j < B; ++j) Xn.col(j) = env.step(X.col(j), U.col(j));
  const Vector v_next = value.values(Xn);
  const Matrix dv_next = value.input_gradients(Xn);

  PolicyGradient out;
  Matrix upstream(mi, B);
  for (Eigen::Index j = 0; j < B; ++j) {
    const Vector x = X.col(j), u = U.col(j);
    const Vector dev = u.segment(off, mi) - guidance.col(j).segment(off, mi);
    upstream.col(j) = env.cost_grad_u(i, x, u) + 2.0 * rho * dev +
                      gamma * env.jacobian_u_agent(x, u, i).transpose() * dv_next.col(j);
    out.loss += env.cost(i, x, u) + rho * dev.squaredNorm() + gamma * v_next(j);
    out.guidance_dev += dev.norm();
  }
  out.loss /= static_cast<double>(B);
  out.guidance_dev /= static_cast<double>(B);
  out.grad = policies[ui].backward(cache, upstream).flatten();
  return out;
}

struct ValueGradient {
  Vector grad;
  double bellman_error = 0.0;  // batch mean of the squared residual, pre-step
};

/// V(x_j) - c_rho^i(x_j, u_j) - gamma V(x_j') for each batch column.
template <class ValueFn>
Vector bellman_residuals(const Environment& env, int i, const std::vector<Network>& policies,
                         const ValueFn& value, const Matrix& X, const Matrix& guidance,
                         double rho, double gamma) {
  require(X.cols() > 0, "bellman_residuals: empty batch");
  const Eigen::Index B = X.cols();
  const Matrix U = joint_actions(env, policies, X);
  Matrix Xn(X.rows(), B);
  Vector stage(B);
  for (Eigen::Index j = 0; j < B; ++j) {
    Xn.col(j) = env.step(X.col(j), U.col(j));
    stage(j) = guided_stage_cost(env, i, X.col(j), U.col(j), guidance.col(j), rho);
  }
  return value.values(X) - stage - gamma * value.values(Xn);
}

/// Semi-gradient of sum_j (V(x_j) - c_rho^i(x_j, u_j) - gamma V(x_j'))^2 with
/// the bootstrapped target held constant.
inline ValueGradient value_gradient(const Environment& env, int i,
                                    const std::vector<Network>& policies, const Network& value,
                                    const Matrix& X, const Matrix& guidance, double rho,
                                    double gamma) {
  const Vector resid = bellman_residuals(env, i, policies, NetworkValue{value}, X, guidance, rho,
                                         gamma);
  ForwardCache cache;
  value.forward(X, cache);
  ValueGradient out;
  out.bellman_error = resid.squaredNorm() / static_cast<double>(X.cols());
  out.grad = value.backward(cache, 2.0 * resid.transpose()).flatten();
  return out;
}

/// One policy update for agent i; returns the pre-step surrogate statistics.
template <class ValueFn>
PolicyGradient policy_step(const Environment& env, int i, std::vector<Network>& policies,
                           const ValueFn& value, const Matrix& X, const Matrix& guidance,
                           double rho, double gamma, OptimizerState& opt, double eta) {
  PolicyGradient g = policy_gradient(env, i, policies, value, X, guidance, rho, gamma);
  apply_update(policies[static_cast<std::size_t>(i)], g.grad, opt, eta);
  return g;
}

inline ValueGradient value_step(const Environment& env, int i,
                                const std::vector<Network>& policies, Network& value,
                                const Matrix& X, const Matrix& guidance, double rho, double gamma,
                                OptimizerState& opt, double eta) {
  ValueGradient g = value_gradient(env, i, policies, value, X, guidance, rho, gamma);
  apply_update(value, g.grad, opt, eta);
  return g;
}

struct StepStatistics {
  std::vector<PolicyGradient> policy;
  std::vector<ValueGradient> value;
};

/// One simultaneous step for every agent: all gradients are taken at the
/// start-of-step parameters, then applied. `batches` and `guidance` hold one
/// entry shared by all agents or one per agent. `order` only changes the
/// evaluation order and cannot change the result.
inline StepStatistics simultaneous_update(const Environment& env, AgentModels& m,
                                          const std::vector<Matrix>& batches,
                                          const std::vector<Matrix>& guidance, double rho,
                                          double gamma, double eta, std::vector<int> order = {}) {
  const int N = env.agent_count();
  require(batches.size() == guidance.size() &&
              (batches.size() == 1 || static_cast<int>(batches.size()) == N),
          "simultaneous_update: need one batch or one per agent");
  if (order.empty())
    for (int i = 0; i < N; ++i) order.push_back(i);
  require(static_cast<int>(order.size()) == N, "simultaneous_update: order must list every agent");
  StepStatistics st;
  st.policy.resize(static_cast<std::size_t>(N));
  st.value.resize(static_cast<std::size_t>(N));
  for (int i : order) {
    const auto ui = static_cast<std::size_t>(i);
    const std::size_t b = batches.size() == 1 ? 0 : ui;
    st.policy[ui] = policy_gradient(env, i, m.policies, NetworkValue{m.values[ui]}, batches[b],
                                    guidance[b], rho, gamma);
    st.value[ui] = value_gradient(env, i, m.policies, m.values[ui], batches[b], guidance[b], rho,
                                  gamma);
  }
  for (int i = 0; i < N; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    apply_update(m.policies[ui], st.policy[ui].grad, m.policy_opt[ui], eta);
    apply_update(m.values[ui], st.value[ui].grad, m.value_opt[ui], eta);
  }
  return st;
}

struct GuidanceBatch {
  Matrix guidance;  // m x batch
  int degraded = 0;
};

/// Guidance for every column of X under the joint policy. Rollouts that
/// diverge or local solves that fail fall back to the policy action.
inline GuidanceBatch compute_guidance(const Environment& env, const std::vector<Network>& policies,
                                      const Matrix& X, const GuidanceOptions& opt,
                                      int threads = 1) {
  GuidanceBatch out;
  out.guidance.resize(env.total_control_dim(), X.cols());
  std::vector<char> degraded(static_cast<std::size_t>(X.cols()), 0);
  const JointPolicy policy = make_joint_policy(env, policies);
  parallel_for(static_cast<int>(X.cols()), threads, [&](int j) {
    try {
      const GuidanceResult g = guidance_control(env, policy, X.col(j), opt);
      out.guidance.col(j) = g.guidance;
      degraded[static_cast<std::size_t>(j)] = g.degraded;
    } catch (const NonFiniteState&) {
      out.guidance.col(j) = policy(X.col(j));
      degraded[static_cast<std::size_t>(j)] = 1;
    }
  });
  for (char d : degraded) out.degraded += d;
  return out;
}

struct Episode {
  std::vector<Vector> states;    // x_0 .. x_H
  std::vector<Vector> controls;  // u_0 .. u_{H-1}
  std::vector<double> costs;     // discounted per agent
  bool non_finite = false;
};

/// Closed-loop simulation for `horizon` steps; stops early on a non-finite
/// state and flags it.
inline Episode simulate(const Environment& env, const std::vector<Network>& policies,
                        const Vector& x0, int horizon, double gamma) {
  Episode ep;
  ep.costs.assign(static_cast<std::size_t>(env.agent_count()), 0.0);
  ep.states.push_back(x0);
  double discount = 1.0;
  for (int t = 0; t < horizon; ++t) {
    const Vector& x = ep.states.back();
    const Vector u = joint_actions(env, policies, Matrix(x)).col(0);
    Vector next = env.step(x, u);
    for (int i = 0; i < env.agent_count(); ++i)
      ep.costs[static_cast<std::size_t>(i)] += discount * env.cost(i, x, u);
    ep.controls.push_back(u);
    discount *= gamma;
    if (!u.allFinite() || !next.allFinite()) {
      ep.non_finite = true;
      break;
    }
    ep.states.push_back(std::move(next));
  }
  return ep;
}

struct EvaluationResult {
  std::vector<double> mean;    // per agent
  std::vector<double> stddev;  // per agent, population
  std::vector<Vector> final_states;
  int non_finite = 0;

  double total_mean() const {
    double s = 0.0;
    for (double m : mean) s += m;
    return s;
  }
};

inline EvaluationResult evaluate(const Environment& env, const std::vector<Network>& policies,
                                 int episodes, int horizon, double gamma, std::uint64_t seed) {
  if (episodes < 1) throw Error("evaluate: episodes must be at least 1");
  const auto N = static_cast<std::size_t>(env.agent_count());
  std::vector<std::vector<double>> costs(N);
  EvaluationResult out;
  for (const Vector& x0 : env.sample_initial(seed, episodes)) {
    const Episode ep = simulate(env, policies, x0, horizon, gamma);
    for (std::size_t i = 0; i < N; ++i) costs[i].push_back(ep.costs[i]);
    out.final_states.push_back(ep.states.back());
    out.non_finite += ep.non_finite;
  }
  for (std::size_t i = 0; i < N; ++i) {
    double m = 0.0, s = 0.0;
    for (double c : costs[i]) m += c;
    m /= static_cast<double>(episodes);
    for (double c : costs[i]) s += (c - m) * (c - m);
    out.mean.push_back(m);
    out.stddev.push_back(std::sqrt(s / static_cast<double>(episodes)));
  }
  return out;
}

struct RolloutStats {
  int added = 0;
  int failed = 0;
};

/// Appends `count` closed-loop trajectories of T_r + 1 steps from initial
/// states drawn with `seed`. Diverging rollouts are dropped and counted.
inline RolloutStats collect_rollouts(const Environment& env, const std::vector<Network>& policies,
                                     int count, int length, std::uint64_t seed,
                                     ReplayBuffer& buffer, std::ostream* log = nullptr) {
  RolloutStats stats;
  for (const Vector& x0 : env.sample_initial(seed, count)) {
    const Episode ep = simulate(env, policies, x0, length + 1, 1.0);
    if (ep.non_finite) {
      ++stats.failed;
      if (log) *log << "rollout diverged after " << ep.states.size() << " states; dropped\n";
      continue;
    }
    Trajectory traj;
    traj.states.assign(ep.states.begin(), ep.states.end() - 1);
    traj.controls = ep.controls;
    traj.terminal = ep.states.back();
    buffer.push(std::move(traj));
    ++stats.added;
  }
  return stats;
}

struct MetricsRow {
  long step = 0;
  int agent = 0;
  double policy_loss = std::numeric_limits<double>::quiet_NaN();
  double bellman_error = std::numeric_limits<double>::quiet_NaN();
  double guidance_dev = std::numeric_limits<double>::quiet_NaN();
  double eval_cost = std::numeric_limits<double>::quiet_NaN();
  double rho = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
};

struct TrainingOptions {
  std::string checkpoint_dir;  // empty: no checkpoints
  std::ostream* log = nullptr;
  std::function<void(const MetricsRow&)> on_row;
  std::function<void(long step, const AgentModels&)> on_step;  // after each update
};

struct TrainResult {
  AgentModels models;
  std::vector<MetricsRow> metrics;
  EvaluationResult initial_eval;
  EvaluationResult final_eval;
  long degraded_guidance = 0;
  long failed_rollouts = 0;
};

inline std::uint64_t evaluation_seed(const TrainingConfig& cfg) {
  return cfg.seed ^ 0x9e3779b97f4a7c15ULL;
}

inline std::vector<NamedNetwork> named_networks(const AgentModels& m) {
  std::vector<NamedNetwork> out;
  for (std::size_t i = 0; i < m.policies.size(); ++i)
    out.push_back({"policy_" + std::to_string(i), m.policies[i]});
  for (std::size_t i = 0; i < m.values.size(); ++i)
    out.push_back({"value_" + std::to_string(i), m.values[i]});
  return out;
}

/// Algorithm loop: epochs -> gradient steps -> (rollouts, then simultaneous
/// per-agent policy and value updates against a start-of-step snapshot).
inline TrainResult train(const Environment& env, const TrainingConfig& cfg,
                         const TrainingOptions& opt = {}) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  auto elapsed_ms = [&] {
    if (!cfg.record_wall_time) return 0.0;
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  };
  const int N = env.agent_count();
  const auto schedule = cfg.schedule();
  std::mt19937_64 rng(cfg.seed);

  TrainResult res;
  res.models = AgentModels::make(env, cfg, rng);
  AgentModels& m = res.models;
  ReplayBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity));
  GuidanceOptions gopt;
  gopt.horizon = cfg.guidance_horizon;
  gopt.numerics = cfg.numerics;

  auto emit = [&](const MetricsRow& row) {
    res.metrics.push_back(row);
    if (opt.on_row) opt.on_row(row);
  };
  auto run_eval = [&] {
    return evaluate(env, m.policies, cfg.eval_episodes, cfg.eval_horizon, cfg.gamma,
                    evaluation_seed(cfg));
  };
  auto checkpoint = [&](const std::string& tag, long step) {
    if (opt.checkpoint_dir.empty()) return;
    save_checkpoint(opt.checkpoint_dir + "/" + tag, named_networks(m),
                    {{"env", env.name()}, {"step", step}});
  };

  res.initial_eval = run_eval();
  for (int i = 0; i < N; ++i) {
    MetricsRow row;
    row.agent = i;
    row.eval_cost = res.initial_eval.mean[static_cast<std::size_t>(i)];
    row.rho = schedule.front();
    emit(row);
  }

  std::map<std::uint64_t, Vector> cache;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double rho = schedule[static_cast<std::size_t>(epoch)];
    cache.clear();
    for (int g = 0; g < cfg.steps_per_epoch; ++g) {
      ++step;
      const RolloutStats rs = collect_rollouts(env, m.policies, cfg.rollouts_per_step,
                                               cfg.rollout_length, rng(), buffer, opt.log);
      res.failed_rollouts += rs.failed;
      if (2 * rs.failed > cfg.rollouts_per_step || buffer.state_count() == 0) {
        throw TrainingAborted("training aborted at step " + std::to_string(step) + ": " +
                              std::to_string(rs.failed) + " of " +
                              std::to_string(cfg.rollouts_per_step) +
                              " rollouts produced non-finite states");
      }

      // Batches and guidance, one per agent (or one shared by all).
      const int batches = cfg.shared_batch ? 1 : N;
      std::vector<Matrix> X(static_cast<std::size_t>(batches));
      std::vector<Matrix> guide(static_cast<std::size_t>(batches));
      for (std::size_t b = 0; b < X.size(); ++b) {
        std::vector<std::uint64_t> keys;
        X[b] = buffer.sample_states(rng, cfg.batch_size, &keys);
        if (rho == 0.0) {
          guide[b] = joint_actions(env, m.policies, X[b]);
          continue;
        }
        if (cfg.guidance_cache == GuidanceCache::PerBatch) {
          GuidanceBatch gb = compute_guidance(env, m.policies, X[b], gopt, cfg.threads);
          res.degraded_guidance += gb.degraded;
          guide[b] = std::move(gb.guidance);
          continue;
        }
        guide[b].resize(env.total_control_dim(), X[b].cols());
        std::vector<Eigen::Index> missing;
        for (Eigen::Index j = 0; j < X[b].cols(); ++j) {
          auto it = cache.find(keys[static_cast<std::size_t>(j)]);
          if (it != cache.end()) guide[b].col(j) = it->second;
          else missing.push_back(j);
        }
        if (!missing.empty()) {
          Matrix Xm(X[b].rows(), static_cast<Eigen::Index>(missing.size()));
          for (std::size_t k = 0; k < missing.size(); ++k) Xm.col(static_cast<Eigen::Index>(k)) = X[b].col(missing[k]);
          GuidanceBatch gb = compute_guidance(env, m.policies, Xm, gopt, cfg.threads);
          res.degraded_guidance += gb.degraded;
          for (std::size_t k = 0; k < missing.size(); ++k) {
            guide[b].col(missing[k]) = gb.guidance.col(static_cast<Eigen::Index>(k));
            cache[keys[missing[k]]] = gb.guidance.col(static_cast<Eigen::Index>(k));
          }
        }
      }

      const StepStatistics st =
          simultaneous_update(env, m, X, guide, rho, cfg.gamma, cfg.eta);
      const auto& pg = st.policy;
      const auto& vg = st.value;

      if (opt.on_step) opt.on_step(step, m);
      const bool last = step == cfg.total_steps();
      const bool eval_now = last || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
      EvaluationResult ev;
      if (eval_now) ev = run_eval();
      if (last) res.final_eval = ev;
      const double wall = elapsed_ms();
      for (int i = 0; i < N; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        MetricsRow row;
        row.step = step;
        row.agent = i;
        row.policy_loss = pg[ui].loss;
        row.bellman_error = vg[ui].bellman_error;
        row.guidance_dev = rho == 0.0 ? 0.0 : pg[ui].guidance_dev;
        if (eval_now) row.eval_cost = ev.mean[ui];
        row.rho = rho;
        row.wall_ms = wall;
        emit(row);
      }
      if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
        char tag[32];
        std::snprintf(tag, sizeof tag, "step_%08ld", step);
        checkpoint(tag, step);
      }
    }
  }
  checkpoint("final", step);
  return res;
}

}  // namespace magps
