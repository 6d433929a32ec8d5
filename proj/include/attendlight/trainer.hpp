#pragma once

// Variance-reduced REINFORCE over one or many environment instances:
// rollouts record full-episode tapes (the LSTM threads through every
// decision), cumulative rewards are undiscounted suffix sums, and the
// actor/critic gradients follow the usual (R - V) log-prob / squared-error
// form, averaged per trajectory and across the batch.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "attendlight/checkpoint.hpp"
#include "attendlight/flow.hpp"
#include "attendlight/policy.hpp"
#include "attendlight/sim.hpp"
#include "attendlight/tensor.hpp"
#include "attendlight/topology.hpp"

namespace attendlight {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One benchmark case: a topology plus its traffic. A synthetic source keeps
// its parameters so evaluation can draw fresh flow seeds.
struct EnvInstance {
  std::string case_id;
  Intersection topology;
  FlowTrace flow;
  std::optional<SyntheticParams> synthetic;
  SimConfig sim;

  static EnvInstance from_flow(std::string case_id, Intersection ix, FlowTrace flow,
                               SimConfig cfg = {}) {
    EnvInstance env;
    env.case_id = std::move(case_id);
    env.topology = std::move(ix);
    env.flow = std::move(flow);
    env.sim = cfg;
    return env;
  }

  static EnvInstance from_synthetic(std::string case_id, Intersection ix,
                                    const SyntheticParams& params, std::uint64_t flow_seed,
                                    SimConfig cfg = {}) {
    EnvInstance env;
    env.case_id = std::move(case_id);
    env.topology = std::move(ix);
    env.synthetic = params;
    env.sim = cfg;
    env.flow = generate_synthetic(env.topology, params, cfg.horizon_s, flow_seed);
    return env;
  }

  FlowTrace flow_for_seed(std::uint64_t seed) const {
    if (synthetic) return generate_synthetic(topology, *synthetic, sim.horizon_s, seed);
    return flow;
  }
};

enum class Regime { single_env, multi_env, stochastic_multi_env };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::single_env: return "single";
    case Regime::multi_env: return "multi";
    default: return "stochastic";
  }
}

struct RegimeConfig {
  Regime regime = Regime::single_env;
  int n = 3;            // parallel instances per iteration
  int episodes = 1000;  // training iterations (each rolls n episodes)
  double lr = 0.005;
  int d = 128;
  PolicyVariant variant = PolicyVariant::attention;
  std::uint64_t seed = 1;
  bool strict_deterministic = false;
  int threads = 0;  // 0: ATTENDLIGHT_THREADS or hardware concurrency
  // Deploy the iterate with the best greedy ATT on the training instances
  // rather than the last one. REINFORCE can fall off a cliff late in a run
  // and sampled-rollout ATT is a poor proxy for greedy deployment; the
  // update rule is untouched, this only picks which checkpoint to keep.
  bool select_best = true;
  int select_probe_every = 10;  // greedy probe cadence in iterations
};

inline RegimeConfig default_single_env_config() { return {}; }

inline RegimeConfig default_multi_env_config(int env_count) {
  RegimeConfig cfg;
  cfg.regime = Regime::multi_env;
  cfg.n = env_count;
  cfg.lr = 0.0005;
  cfg.d = 256;
  return cfg;
}

struct TrainReport {
  struct Row {
    int iteration = 0;
    double mean_return = 0;
    double mean_att = 0;
    double wallclock_s = 0;
  };
  std::vector<Row> rows;
  double wallclock_s = 0;
  std::string checkpoint_id;  // content digest of the final checkpoint
};

// Training curve CSV. Wallclock is not reproducible, so strict-deterministic
// runs pin that column to zero and two identical runs match byte for byte.
inline std::string write_curve_csv(const TrainReport& report, bool strict_deterministic) {
  std::ostringstream out;
  out << "iteration,mean_return,mean_att,wallclock_s\n";
  out.setf(std::ios::fixed);
  out.precision(4);
  for (const auto& row : report.rows)
    out << row.iteration << ',' << row.mean_return << ',' << row.mean_att << ','
        << (strict_deterministic ? 0.0 : row.wallclock_s) << '\n';
  return out.str();
}

// Everything one episode contributes to the update: the recorded tapes plus
// the reward/value sequences.
struct Trajectory {
  Tape<float> actor_tape;
  Tape<float> critic_tape;
  std::vector<Tape<float>::Ref> logprob_refs;
  std::vector<Tape<float>::Ref> value_refs;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<double> returns;
  double att = 0;

  std::size_t length() const { return rewards.size(); }
  double total_return() const {
    double total = 0;
    for (double r : rewards) total += r;
    return total;
  }
};

namespace detail {

// Work-stealing loop over [0, count); worker exceptions surface in the caller.
template <typename Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
    return;
  }
  std::atomic<int> cursor{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    try {
      for (int i = cursor.fetch_add(1); i < count; i = cursor.fetch_add(1))
        fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
      cursor.store(count);
    }
  };
  std::vector<std::thread> pool;
  int workers = std::min(threads, count);
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

// Undiscounted suffix sums R^t = sum_{t' >= t} r^{t'}.
inline std::vector<double> cumulative_returns(const std::vector<double>& rewards) {
  if (rewards.empty()) throw TrainError("empty reward sequence");
  std::vector<double> out(rewards.size());
  double acc = 0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc += rewards[i];
    out[i] = acc;
  }
  return out;
}

// Rolls one full episode, sampling actions from the policy and recording
// log-probs and critic values for the update.
inline Trajectory rollout(const Intersection& ix, const FlowTrace& flow, const SimConfig& cfg,
                          std::uint64_t sim_seed, ParamStore<float>& actor,
                          ParamStore<float>& critic, PolicyVariant variant, Rng& action_rng,
                          bool record_grads = true) {
  Trajectory traj;
  traj.actor_tape.set_grad_enabled(record_grads);
  traj.critic_tape.set_grad_enabled(record_grads);

  SimState sim(ix, flow, cfg, sim_seed);
  Observation obs = sim.observe();
  int d = actor.at("embed/b").value.dim(0);
  auto h = traj.actor_tape.constant(Tensor<float>({d}));
  auto c = traj.actor_tape.constant(Tensor<float>({d}));

  while (!sim.done()) {
    int active = sim.signal().active_phase;
    auto step = actor_step(traj.actor_tape, actor, ix, obs, active, h, c, variant);
    h = step.h;
    c = step.c;
    ActionDistribution dist;
    for (float p : traj.actor_tape.value(step.probs).values)
      dist.probs.push_back(static_cast<double>(p));
    int action = select_action(dist, /*greedy=*/false, action_rng);
    traj.logprob_refs.push_back(traj.actor_tape.log_softmax_pick(step.alignments, action));

    auto v = critic_value(traj.critic_tape, critic, ix, obs, active, variant);
    traj.value_refs.push_back(v);
    traj.values.push_back(static_cast<double>(traj.critic_tape.value(v)[0]));

    StepResult result = sim.apply_decision(action);
    traj.actions.push_back(action);
    traj.rewards.push_back(result.reward);
    obs = std::move(result.observation);
  }
  traj.returns = cumulative_returns(traj.rewards);
  auto log = sim.travel_log();
  traj.att = log.entries.empty() ? 0.0 : average_travel_time(log, cfg.horizon_s);
  return traj;
}

// One REINFORCE step over a batch: per-trajectory means, averaged over the
// batch, applied through Adam. The advantage (R - V) is a detached number,
// so no actor gradient reaches the critic and vice versa.
inline void reinforce_update(std::vector<Trajectory>& batch, ParamStore<float>& actor,
                             ParamStore<float>& critic, double lr, int threads = 1) {
  if (batch.empty()) throw TrainError("empty trajectory batch");
  actor.zero_grads();
  critic.zero_grads();
  float inv_n = 1.0f / static_cast<float>(batch.size());

  auto sweep = [&](Trajectory& traj) {
    float inv_t = 1.0f / static_cast<float>(traj.length());
    std::vector<float> coeffs(traj.length());
    for (std::size_t t = 0; t < traj.length(); ++t) {
      double advantage = traj.returns[t] - traj.values[t];
      coeffs[t] = static_cast<float>(-advantage) * inv_t * inv_n;
    }
    auto actor_loss = traj.actor_tape.affine_combination(traj.logprob_refs, coeffs);
    traj.actor_tape.backward(actor_loss, /*commit=*/false);

    std::vector<float> targets(traj.length());
    for (std::size_t t = 0; t < traj.length(); ++t)
      targets[t] = static_cast<float>(traj.returns[t]);
    auto critic_loss =
        traj.critic_tape.squared_error_sum(traj.value_refs, targets, inv_t * inv_n);
    traj.critic_tape.backward(critic_loss, /*commit=*/false);
  };

  detail::parallel_for(static_cast<int>(batch.size()), threads,
                       [&](std::size_t i) { sweep(batch[i]); });

  // Leaf gradients merge in batch order, keeping updates bitwise reproducible
  // regardless of the thread schedule.
  for (auto& traj : batch) {
    traj.actor_tape.commit_leaf_grads();
    traj.critic_tape.commit_leaf_grads();
  }
  adam_step(actor, lr);
  adam_step(critic, lr);
}

inline int resolve_threads(int requested, bool strict) {
  if (strict) return 1;
  if (requested > 0) return requested;
  if (const char* env = std::getenv("ATTENDLIGHT_THREADS")) {
    int parsed = std::atoi(env);
    if (parsed > 0) return parsed;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace detail {

struct RolloutPlan {
  const EnvInstance* env;
  std::uint64_t stream;
};

inline std::vector<Trajectory> run_batch(const std::vector<RolloutPlan>& plans,
                                         ParamStore<float>& actor, ParamStore<float>& critic,
                                         PolicyVariant variant, std::uint64_t seed,
                                         int threads) {
  std::vector<Trajectory> batch(plans.size());
  parallel_for(static_cast<int>(plans.size()), threads, [&](std::size_t k) {
    const auto& plan = plans[k];
    Rng action_rng = Rng(seed).fork(plan.stream * 2 + 1);
    std::uint64_t sim_seed = splitmix64(seed ^ splitmix64(plan.stream * 2));
    batch[k] = rollout(plan.env->topology, plan.env->flow, plan.env->sim, sim_seed, actor,
                       critic, variant, action_rng);
  });
  return batch;
}

}  // namespace detail

// Greedy episode under a trained policy; returns the ATT. Pass trace_out to
// capture the per-tick trace.
inline double greedy_episode(const Intersection& ix, const FlowTrace& flow,
                             const SimConfig& cfg, std::uint64_t sim_seed,
                             ParamStore<float>& actor, PolicyVariant variant,
                             std::vector<SimTraceRow>* trace_out = nullptr) {
  SimState sim(ix, flow, cfg, sim_seed);
  if (trace_out) sim.enable_trace();
  Observation obs = sim.observe();
  int d = actor.at("embed/b").value.dim(0);
  auto pstate = PolicyState<float>::zeros(d);
  Rng unused(0);
  while (!sim.done()) {
    auto [dist, next_state] =
        actor_forward(actor, ix, obs, sim.signal().active_phase, pstate, variant);
    pstate = std::move(next_state);
    int action = select_action(dist, /*greedy=*/true, unused);
    StepResult result = sim.apply_decision(action);
    obs = std::move(result.observation);
  }
  if (trace_out) *trace_out = sim.trace();
  auto log = sim.travel_log();
  return log.entries.empty() ? 0.0 : average_travel_time(log, cfg.horizon_s);
}

struct TrainResult {
  Checkpoint checkpoint;
  TrainReport report;
};

// Trains per the configured regime. Single-env runs n copies of the one
// instance; multi-env uses every instance each iteration; the stochastic
// regime samples n instances without replacement per iteration.
inline TrainResult train(const RegimeConfig& cfg, const std::vector<EnvInstance>& envs,
                         const ParamStore<float>* warm_actor = nullptr,
                         const ParamStore<float>* warm_critic = nullptr) {
  if (envs.empty()) throw TrainError("no environment instances");
  if (cfg.regime == Regime::single_env && envs.size() != 1)
    throw TrainError("single-env regime requires exactly one environment instance");
  int n = cfg.n;
  if (cfg.regime == Regime::multi_env) n = static_cast<int>(envs.size());
  if (cfg.regime == Regime::stochastic_multi_env &&
      n > static_cast<int>(envs.size()))
    throw TrainError("stochastic regime mini-batch larger than environment set");
  if (n < 1) throw TrainError("need at least one parallel instance");

  ParamStore<float> actor, critic;
  if (warm_actor && warm_critic) {
    for (const auto& [name, p] : *warm_actor) actor.add(name, p.value);
    for (const auto& [name, p] : *warm_critic) critic.add(name, p.value);
  } else {
    Rng init_rng = Rng(cfg.seed).fork(0xfeed);
    init_actor_params(actor, cfg.d, init_rng);
    init_critic_params(critic, cfg.d, init_rng);
  }

  int threads = resolve_threads(cfg.threads, cfg.strict_deterministic);
  Rng pick_rng = Rng(cfg.seed).fork(0x5e1ec7);
  TrainReport report;
  auto start = std::chrono::steady_clock::now();
  bool have_best = false;
  double best_att = 0;
  Checkpoint best_checkpoint;

  // Greedy probe over the training instances with pinned simulator seeds;
  // the deployment metric, measured deterministically.
  auto greedy_probe = [&]() {
    double total = 0;
    for (std::size_t e = 0; e < envs.size(); ++e)
      total += greedy_episode(envs[e].topology, envs[e].flow, envs[e].sim,
                              0xbe57ull + e, actor, cfg.variant);
    return total / static_cast<double>(envs.size());
  };
  auto consider_snapshot = [&]() {
    double att = greedy_probe();
    if (att > 0 && (!have_best || att < best_att)) {
      have_best = true;
      best_att = att;
      best_checkpoint = make_policy_checkpoint(actor, critic, cfg.d, cfg.variant);
    }
  };
  if (cfg.select_best && cfg.episodes > 0) consider_snapshot();  // warm starts compete

  for (int it = 0; it < cfg.episodes; ++it) {
    std::vector<detail::RolloutPlan> plans;
    plans.reserve(static_cast<std::size_t>(n));
    if (cfg.regime == Regime::single_env) {
      for (int k = 0; k < n; ++k) plans.push_back({&envs[0], 0});
    } else if (cfg.regime == Regime::multi_env) {
      for (std::size_t e = 0; e < envs.size(); ++e) plans.push_back({&envs[e], 0});
    } else {
      auto chosen = pick_rng.sample_without_replacement(envs.size(), static_cast<std::size_t>(n));
      for (std::size_t e : chosen) plans.push_back({&envs[e], 0});
    }
    for (std::size_t k = 0; k < plans.size(); ++k)
      plans[k].stream = static_cast<std::uint64_t>(it) * 1000003ull + k;

    auto batch = detail::run_batch(plans, actor, critic, cfg.variant, cfg.seed, threads);
    double mean_return = 0, mean_att = 0;
    for (const auto& traj : batch) {
      mean_return += traj.total_return();
      mean_att += traj.att;
    }
    mean_return /= static_cast<double>(batch.size());
    mean_att /= static_cast<double>(batch.size());

    reinforce_update(batch, actor, critic, cfg.lr, threads);

    if (cfg.select_best &&
        (it % cfg.select_probe_every == cfg.select_probe_every - 1 || it == cfg.episodes - 1))
      consider_snapshot();

    double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.rows.push_back({it, mean_return, mean_att, elapsed});
  }
  report.wallclock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  TrainResult result;
  result.checkpoint = have_best ? std::move(best_checkpoint)
                                : make_policy_checkpoint(actor, critic, cfg.d, cfg.variant);
  report.checkpoint_id = checkpoint_digest(result.checkpoint);
  result.report = std::move(report);
  return result;
}

// Continues training a checkpoint on one instance; the network shape is
// untouched, so the result still runs on any intersection.
inline TrainResult finetune(const Checkpoint& ckpt, const EnvInstance& env, int episodes,
                            double lr = 0.005, std::uint64_t seed = 1,
                            bool strict_deterministic = false, int threads = 0) {
  ParamStore<float> actor, critic;
  load_policy_checkpoint(ckpt, actor, critic);
  if (episodes <= 0) {
    TrainResult result;
    result.checkpoint = make_policy_checkpoint(
        actor, critic, static_cast<int>(ckpt.d),
        ckpt.mean_state_variant() ? PolicyVariant::mean_state : PolicyVariant::attention);
    return result;
  }
  RegimeConfig cfg;
  cfg.regime = Regime::single_env;
  cfg.n = 3;
  cfg.episodes = episodes;
  cfg.lr = lr;
  cfg.d = static_cast<int>(ckpt.d);
  cfg.variant =
      ckpt.mean_state_variant() ? PolicyVariant::mean_state : PolicyVariant::attention;
  cfg.seed = seed;
  cfg.strict_deterministic = strict_deterministic;
  cfg.threads = threads;
  return train(cfg, {env}, &actor, &critic);
}

struct EvalResult {
  std::vector<double> per_seed_att;
  double mean_att = 0;
};

// Scores a checkpoint greedily across seeds. Synthetic instances draw a
// fresh flow per seed; fixed traces vary only the simulator stream.
inline EvalResult evaluate(const Checkpoint& ckpt, const EnvInstance& env,
                           const std::vector<std::uint64_t>& seeds,
                           std::vector<SimTraceRow>* first_trace = nullptr) {
  ParamStore<float> actor, critic;
  load_policy_checkpoint(ckpt, actor, critic);
  PolicyVariant variant =
      ckpt.mean_state_variant() ? PolicyVariant::mean_state : PolicyVariant::attention;
  EvalResult result;
  for (std::uint64_t seed : seeds) {
    FlowTrace flow = env.flow_for_seed(seed);
    result.per_seed_att.push_back(
        greedy_episode(env.topology, flow, env.sim, seed, actor, variant,
                       result.per_seed_att.empty() ? first_trace : nullptr));
  }
  for (double att : result.per_seed_att) result.mean_att += att;
  if (!result.per_seed_att.empty())
    result.mean_att /= static_cast<double>(result.per_seed_att.size());
  return result;
}

}  // namespace attendlight
