#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mempi/model.hpp"
#include "mempi/random.hpp"

namespace mempi {

// One episode. observations and states have T+1 entries (stage T included);
// rewards[t] is R_t and terminal_reward is V_T(S_T).
struct Trajectory {
  std::vector<std::size_t> states;
  std::vector<std::size_t> observations;
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  double terminal_reward = 0.0;

  // sum_{k=t}^{T-1} R_k + V_T(S_T).
  double return_from(std::size_t t) const {
    double g = terminal_reward;
    for (std::size_t k = t; k < rewards.size(); ++k) g += rewards[k];
    return g;
  }
};

template <class B>
concept ActionSampler = requires(const B& b, std::size_t t, std::size_t o, Rng& rng) {
  { b.sample(t, o, rng) } -> std::convertible_to<std::size_t>;
  { b.probability(t, o, std::size_t{}) } -> std::convertible_to<double>;
};

// Plays the deterministic policy.
struct OnPolicy {
  const DeterministicPolicy* policy;

  std::size_t sample(std::size_t t, std::size_t o, Rng&) const { return policy->action(t, o); }
  double probability(std::size_t t, std::size_t o, std::size_t a) const {
    return a == policy->action(t, o) ? 1.0 : 0.0;
  }
};

// 1 - eps + eps/|A| on pi_t(o), eps/|A| on every other action.
struct EpsilonSoft {
  const DeterministicPolicy* policy;
  double epsilon;

  std::size_t sample(std::size_t t, std::size_t o, Rng& rng) const {
    if (epsilon > 0.0 && rng.uniform() < epsilon) return rng.below(policy->num_actions());
    return policy->action(t, o);
  }
  double probability(std::size_t t, std::size_t o, std::size_t a) const {
    const double spread = epsilon / static_cast<double>(policy->num_actions());
    return a == policy->action(t, o) ? 1.0 - epsilon + spread : spread;
  }
};

inline EpsilonSoft epsilon_soft(const DeterministicPolicy& policy, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("epsilon must lie in [0, 1], got " + std::to_string(epsilon));
  }
  return EpsilonSoft{&policy, epsilon};
}

// Uniformly random actions at one stage, the policy everywhere else.
struct ExploringAt {
  const DeterministicPolicy* policy;
  std::size_t stage;

  std::size_t sample(std::size_t t, std::size_t o, Rng& rng) const {
    return t == stage ? rng.below(policy->num_actions()) : policy->action(t, o);
  }
  double probability(std::size_t t, std::size_t o, std::size_t a) const {
    if (t == stage) return 1.0 / static_cast<double>(policy->num_actions());
    return a == policy->action(t, o) ? 1.0 : 0.0;
  }
};

// Samples from a tabular stochastic policy.
struct StochasticSampler {
  const StochasticPolicy* policy;

  std::size_t sample(std::size_t t, std::size_t o, Rng& rng) const {
    return rng.categorical(policy->distribution(t, o));
  }
  double probability(std::size_t t, std::size_t o, std::size_t a) const {
    return policy->distribution(t, o)[a];
  }
};

struct SimulationOptions {
  // Half-width of zero-mean uniform noise added to each realized reward.
  // Zero realizes R_t = r_t(S_t, A_t) exactly.
  double reward_noise = 0.0;
};

template <ActionSampler Behavior>
Trajectory simulate_episode(const PomdpModel& model, const Behavior& behavior, Rng& rng,
                            const SimulationOptions& options = {}) {
  const std::size_t T = model.horizon();
  Trajectory traj;
  traj.states.resize(T + 1);
  traj.observations.resize(T + 1);
  traj.actions.resize(T);
  traj.rewards.resize(T);
  std::size_t s = rng.categorical(model.initial());
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t o = rng.categorical(model.observation_row(t, s));
    const std::size_t a = behavior.sample(t, o, rng);
    double r = model.reward(t, s, a);
    if (options.reward_noise > 0.0) r += rng.uniform(-options.reward_noise, options.reward_noise);
    traj.states[t] = s;
    traj.observations[t] = o;
    traj.actions[t] = a;
    traj.rewards[t] = r;
    s = rng.categorical(model.transition_row(t, s, a));
  }
  traj.states[T] = s;
  traj.observations[T] = rng.categorical(model.observation_row(T, s));
  traj.terminal_reward = model.terminal()[s];
  return traj;
}

// ---------------------------------------------------------------------------
// Datasets

enum class DatasetMode { kStateInformed, kObservationOnly };

inline const char* to_string(DatasetMode mode) {
  return mode == DatasetMode::kStateInformed ? "state_informed" : "observation_only";
}

struct BehaviorDescriptor {
  double epsilon = 0.0;
  std::optional<std::size_t> explore_stage;
};

// n_s episodes stored stage-major per episode. Next-state/next-observation
// fields are the stage t+1 entries of the same episode, so chaining holds by
// construction. Observation-only datasets do not store states.
class EpisodeDataset {
 public:
  EpisodeDataset() = default;
  EpisodeDataset(DatasetMode mode, const Sizes& sizes, std::size_t episodes, std::uint64_t seed,
                 BehaviorDescriptor behavior)
      : mode_(mode), sizes_(sizes), episodes_(episodes), seed_(seed), behavior_(behavior) {
    const std::size_t T = sizes.horizon;
    if (mode == DatasetMode::kStateInformed) states_.assign((T + 1) * episodes, 0);
    observations_.assign((T + 1) * episodes, 0);
    actions_.assign(T * episodes, 0);
    rewards_.assign(T * episodes, 0.0);
    terminal_.assign(episodes, 0.0);
  }

  DatasetMode mode() const noexcept { return mode_; }
  const Sizes& sizes() const noexcept { return sizes_; }
  std::size_t episodes() const noexcept { return episodes_; }
  std::size_t horizon() const noexcept { return sizes_.horizon; }
  std::uint64_t seed() const noexcept { return seed_; }
  const BehaviorDescriptor& behavior() const noexcept { return behavior_; }
  bool has_states() const noexcept { return mode_ == DatasetMode::kStateInformed; }

  std::size_t state(std::size_t i, std::size_t t) const {
    if (!has_states()) throw std::logic_error("observation-only dataset has no states");
    return states_[i * (horizon() + 1) + t];
  }
  std::size_t observation(std::size_t i, std::size_t t) const {
    return observations_[i * (horizon() + 1) + t];
  }
  std::size_t action(std::size_t i, std::size_t t) const { return actions_[i * horizon() + t]; }
  double reward(std::size_t i, std::size_t t) const { return rewards_[i * horizon() + t]; }
  double terminal_reward(std::size_t i) const { return terminal_[i]; }
  std::size_t next_state(std::size_t i, std::size_t t) const { return state(i, t + 1); }
  std::size_t next_observation(std::size_t i, std::size_t t) const { return observation(i, t + 1); }

  // sum_{k=t}^{T-1} R_{k,i} + V_T(S_{T,i}).
  double return_from(std::size_t i, std::size_t t) const {
    double g = terminal_[i];
    for (std::size_t k = t; k < horizon(); ++k) g += reward(i, k);
    return g;
  }

  void store(std::size_t i, const Trajectory& traj) {
    const std::size_t T = horizon();
    for (std::size_t t = 0; t <= T; ++t) {
      if (has_states()) states_[i * (T + 1) + t] = traj.states[t];
      observations_[i * (T + 1) + t] = traj.observations[t];
    }
    for (std::size_t t = 0; t < T; ++t) {
      actions_[i * T + t] = traj.actions[t];
      rewards_[i * T + t] = traj.rewards[t];
    }
    terminal_[i] = traj.terminal_reward;
  }

  // Direct setters for loaders.
  void set_state(std::size_t i, std::size_t t, std::size_t s) { states_[i * (horizon() + 1) + t] = s; }
  void set_observation(std::size_t i, std::size_t t, std::size_t o) {
    observations_[i * (horizon() + 1) + t] = o;
  }
  void set_action(std::size_t i, std::size_t t, std::size_t a) { actions_[i * horizon() + t] = a; }
  void set_reward(std::size_t i, std::size_t t, double r) { rewards_[i * horizon() + t] = r; }
  void set_terminal_reward(std::size_t i, double r) { terminal_[i] = r; }

  bool operator==(const EpisodeDataset& other) const {
    return mode_ == other.mode_ && sizes_ == other.sizes_ && episodes_ == other.episodes_ &&
           states_ == other.states_ && observations_ == other.observations_ &&
           actions_ == other.actions_ && rewards_ == other.rewards_ && terminal_ == other.terminal_;
  }

 private:
  DatasetMode mode_ = DatasetMode::kStateInformed;
  Sizes sizes_{};
  std::size_t episodes_ = 0;
  std::uint64_t seed_ = 0;
  BehaviorDescriptor behavior_{};
  std::vector<std::size_t> states_;
  std::vector<std::size_t> observations_;
  std::vector<std::size_t> actions_;
  std::vector<double> rewards_;
  std::vector<double> terminal_;
};

// Per-stage visit counts N_t(s), N_t(o), N_t(s,o), N_t(s,a), N_t(o,a).
// State-indexed counts are empty for observation-only datasets.
struct StageCounts {
  std::size_t S = 0, A = 0, O = 0;
  std::vector<std::size_t> n_s, n_o, n_so, n_sa, n_oa;

  std::size_t state(std::size_t s) const { return n_s[s]; }
  std::size_t obs(std::size_t o) const { return n_o[o]; }
  std::size_t state_obs(std::size_t s, std::size_t o) const { return n_so[s * O + o]; }
  std::size_t state_action(std::size_t s, std::size_t a) const { return n_sa[s * A + a]; }
  std::size_t obs_action(std::size_t o, std::size_t a) const { return n_oa[o * A + a]; }
};

inline StageCounts stage_counts(const EpisodeDataset& data, std::size_t t) {
  const Sizes& sz = data.sizes();
  StageCounts c;
  c.S = sz.states;
  c.A = sz.actions;
  c.O = sz.observations;
  c.n_o.assign(c.O, 0);
  c.n_oa.assign(c.O * c.A, 0);
  if (data.has_states()) {
    c.n_s.assign(c.S, 0);
    c.n_so.assign(c.S * c.O, 0);
    c.n_sa.assign(c.S * c.A, 0);
  }
  const bool has_action = t < data.horizon();
  for (std::size_t i = 0; i < data.episodes(); ++i) {
    const std::size_t o = data.observation(i, t);
    ++c.n_o[o];
    const std::size_t a = has_action ? data.action(i, t) : 0;
    if (has_action) ++c.n_oa[o * c.A + a];
    if (data.has_states()) {
      const std::size_t s = data.state(i, t);
      ++c.n_s[s];
      ++c.n_so[s * c.O + o];
      if (has_action) ++c.n_sa[s * c.A + a];
    }
  }
  return c;
}

namespace detail {

// Runs fn(i) for i in [0, n) across hardware threads, at least `grain`
// indices per worker. Each index writes only its own output slot, so results
// do not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t grain = 1024) {
  const std::size_t workers =
      std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), (n + grain - 1) / grain);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

// Episode i is simulated with stream(seed, i).
template <ActionSampler Behavior>
EpisodeDataset collect_episodes(const PomdpModel& model, const Behavior& behavior, std::size_t episodes,
                                std::uint64_t seed, DatasetMode mode, BehaviorDescriptor descriptor,
                                const SimulationOptions& options = {}) {
  EpisodeDataset data(mode, model.sizes(), episodes, seed, descriptor);
  detail::parallel_for(episodes, [&](std::size_t i) {
    Rng rng = stream(seed, i);
    data.store(i, simulate_episode(model, behavior, rng, options));
  });
  return data;
}

inline EpisodeDataset collect_state_informed(const PomdpModel& model, const DeterministicPolicy& policy,
                                             double epsilon, std::size_t episodes, std::uint64_t seed,
                                             const SimulationOptions& options = {}) {
  const auto behavior = epsilon_soft(policy, epsilon);
  return collect_episodes(model, behavior, episodes, seed, DatasetMode::kStateInformed,
                          BehaviorDescriptor{epsilon, std::nullopt}, options);
}

inline EpisodeDataset collect_observation_only(const PomdpModel& model, const DeterministicPolicy& policy,
                                               std::size_t explore_stage, std::size_t episodes,
                                               std::uint64_t seed, const SimulationOptions& options = {}) {
  if (explore_stage >= model.horizon()) {
    throw std::out_of_range("exploring stage " + std::to_string(explore_stage) + " out of range");
  }
  const ExploringAt behavior{&policy, explore_stage};
  return collect_episodes(model, behavior, episodes, seed, DatasetMode::kObservationOnly,
                          BehaviorDescriptor{1.0, explore_stage}, options);
}

}  // namespace mempi
