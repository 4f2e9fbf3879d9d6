#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mempi/evaluation.hpp"
#include "mempi/matrix.hpp"
#include "mempi/model.hpp"
#include "mempi/random.hpp"
#include "mempi/schedule.hpp"
#include "mempi/simulation.hpp"
#include "mempi/solver.hpp"

namespace mempi {

namespace detail {

inline void require_states(const EpisodeDataset& data, const char* what) {
  if (!data.has_states()) throw std::invalid_argument(std::string(what) + " needs a state-informed dataset");
}

inline std::size_t count_flags(const std::vector<bool>& flags) {
  return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Estimators from state-informed data

// qhat_t(o|s) in probs(s, o). fallback[s] marks unvisited states (uniform row).
struct ObservationEstimate {
  Matrix probs;
  std::vector<bool> fallback;
};

inline ObservationEstimate estimate_q_obs(const EpisodeDataset& data, std::size_t t) {
  detail::require_states(data, "estimate_q_obs");
  detail::require_stage(t, data.horizon() + 1, "estimate_q_obs");
  const Sizes& sz = data.sizes();
  const StageCounts c = stage_counts(data, t);
  ObservationEstimate out{Matrix(sz.states, sz.observations), std::vector<bool>(sz.states, false)};
  for (std::size_t s = 0; s < sz.states; ++s) {
    const std::size_t n = c.state(s);
    out.fallback[s] = n == 0;
    for (std::size_t o = 0; o < sz.observations; ++o) {
      out.probs(s, o) = n == 0 ? 1.0 / static_cast<double>(sz.observations)
                               : static_cast<double>(c.state_obs(s, o)) / static_cast<double>(n);
    }
  }
  return out;
}

// Qhat_t(s,a) in values(s, a). fallback[s*A + a] marks unvisited pairs.
struct StateActionEstimate {
  Matrix values;
  std::vector<bool> fallback;
};

// Smallest realized stage reward in the dataset (0 for an empty one).
inline double min_observed_reward(const EpisodeDataset& data) {
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < data.episodes(); ++i)
    for (std::size_t t = 0; t < data.horizon(); ++t) lo = std::min(lo, data.reward(i, t));
  return std::isfinite(lo) ? lo : 0.0;
}

// Vhat_{t+1}(s) = sum_o qhat_{t+1}(o|s) Qhat_{t+1}(s, pi_{t+1}(o)).
inline std::vector<double> estimated_state_values(const ObservationEstimate& q_obs,
                                                  const StateActionEstimate& q_sa,
                                                  const DeterministicPolicy& policy, std::size_t t) {
  const std::size_t S = q_obs.probs.rows(), O = q_obs.probs.cols();
  std::vector<double> v(S, 0.0);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t o = 0; o < O; ++o) v[s] += q_obs.probs(s, o) * q_sa.values(s, policy.action(t, o));
  return v;
}

// Sample mean of R_t + Vhat_{t+1}(S'). At t = T-1 the continuation is the
// known terminal value and `q_obs_next` / `q_sa_next` are not read.
// Unvisited pairs get reward_floor * (T - t).
inline StateActionEstimate estimate_q_sa(const EpisodeDataset& data, const DeterministicPolicy& policy,
                                         std::span<const double> terminal,
                                         const ObservationEstimate* q_obs_next,
                                         const StateActionEstimate* q_sa_next, std::size_t t,
                                         std::optional<double> reward_floor = std::nullopt) {
  detail::require_states(data, "estimate_q_sa");
  const std::size_t T = data.horizon();
  detail::require_stage(t, T, "estimate_q_sa");
  const Sizes& sz = data.sizes();
  std::vector<double> v_next;
  if (t + 1 == T) {
    v_next.assign(terminal.begin(), terminal.end());
  } else {
    if (!q_obs_next || !q_sa_next) throw std::invalid_argument("estimate_q_sa needs stage t+1 estimates");
    v_next = estimated_state_values(*q_obs_next, *q_sa_next, policy, t + 1);
  }
  if (v_next.size() != sz.states) throw std::invalid_argument("terminal value has the wrong length");
  Matrix sum(sz.states, sz.actions);
  std::vector<std::size_t> n(sz.states * sz.actions, 0);
  for (std::size_t i = 0; i < data.episodes(); ++i) {
    const std::size_t s = data.state(i, t), a = data.action(i, t);
    sum(s, a) += data.reward(i, t) + v_next[data.next_state(i, t)];
    ++n[s * sz.actions + a];
  }
  const double floor = reward_floor.value_or(min_observed_reward(data)) * static_cast<double>(T - t);
  StateActionEstimate out{Matrix(sz.states, sz.actions), std::vector<bool>(sz.states * sz.actions, false)};
  for (std::size_t s = 0; s < sz.states; ++s) {
    for (std::size_t a = 0; a < sz.actions; ++a) {
      const std::size_t k = n[s * sz.actions + a];
      out.fallback[s * sz.actions + a] = k == 0;
      out.values(s, a) = k == 0 ? floor : sum(s, a) / static_cast<double>(k);
    }
  }
  return out;
}

// alphahat_t(s|o) in alpha(o, s), the layout used by obs_action_values.
// fallback[o] marks columns with no mass (uniform).
struct PosteriorEstimate {
  Matrix alpha;
  std::vector<bool> fallback;
};

// Normalizes counts(s, o) over s for each o.
inline PosteriorEstimate estimate_alpha(const Matrix& n_tilde) {
  const std::size_t S = n_tilde.rows(), O = n_tilde.cols();
  PosteriorEstimate out{Matrix(O, S), std::vector<bool>(O, false)};
  for (std::size_t o = 0; o < O; ++o) {
    double total = 0.0;
    for (std::size_t s = 0; s < S; ++s) total += n_tilde(s, o);
    out.fallback[o] = !(total > 0.0);
    for (std::size_t s = 0; s < S; ++s)
      out.alpha(o, s) = out.fallback[o] ? 1.0 / static_cast<double>(S) : n_tilde(s, o) / total;
  }
  return out;
}

// N_t(s, o) as a matrix.
inline Matrix state_observation_counts(const EpisodeDataset& data, std::size_t t) {
  detail::require_states(data, "state_observation_counts");
  const Sizes& sz = data.sizes();
  const StageCounts c = stage_counts(data, t);
  Matrix n(sz.states, sz.observations);
  for (std::size_t s = 0; s < sz.states; ++s)
    for (std::size_t o = 0; o < sz.observations; ++o) n(s, o) = static_cast<double>(c.state_obs(s, o));
  return n;
}

inline PosteriorEstimate estimate_alpha0(const EpisodeDataset& data) {
  return estimate_alpha(state_observation_counts(data, 0));
}

enum class NTildeWeighting {
  // Each on-policy sample is weighted by Ntilde_t(S, O) and the sum is divided
  // by the total number of on-policy samples.
  kAsPrinted,
  // Each on-policy sample is weighted by Ntilde_t(S, O) / Non_t(S, O), the
  // on-policy count of its own cell, so that Ntilde_{t+1} is Ntilde_t pushed
  // through the dynamics and observation kernel.
  kPerCellNormalized,
};

inline const char* to_string(NTildeWeighting w) {
  return w == NTildeWeighting::kAsPrinted ? "as_printed" : "per_cell";
}

inline NTildeWeighting parse_weighting(const std::string& text) {
  if (text == "as_printed") return NTildeWeighting::kAsPrinted;
  if (text == "per_cell") return NTildeWeighting::kPerCellNormalized;
  throw std::invalid_argument("unknown weighting '" + text + "' (expected as_printed or per_cell)");
}

// Ntilde_{t+1}(s', o') from the stage-t samples whose action agrees with pi_t.
inline Matrix propagate_n_tilde(const EpisodeDataset& data, const DeterministicPolicy& policy,
                                std::size_t t, const Matrix& n_tilde_t,
                                NTildeWeighting weighting = NTildeWeighting::kAsPrinted) {
  detail::require_states(data, "propagate_n_tilde");
  detail::require_stage(t, data.horizon(), "propagate_n_tilde");
  const Sizes& sz = data.sizes();
  std::vector<std::size_t> on_policy(sz.states * sz.observations, 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < data.episodes(); ++i) {
    const std::size_t o = data.observation(i, t);
    if (data.action(i, t) != policy.action(t, o)) continue;
    ++on_policy[data.state(i, t) * sz.observations + o];
    ++total;
  }
  if (total == 0) {
    throw std::runtime_error("no on-policy samples at stage " + std::to_string(t) +
                             " (epsilon or the batch size is too small)");
  }
  Matrix next(sz.states, sz.observations);
  for (std::size_t i = 0; i < data.episodes(); ++i) {
    const std::size_t s = data.state(i, t), o = data.observation(i, t);
    if (data.action(i, t) != policy.action(t, o)) continue;
    double w = n_tilde_t(s, o);
    if (weighting == NTildeWeighting::kPerCellNormalized)
      w /= static_cast<double>(on_policy[s * sz.observations + o]);
    next(data.next_state(i, t), data.next_observation(i, t)) += w;
  }
  if (weighting == NTildeWeighting::kAsPrinted) {
    for (double& x : next.values()) x /= static_cast<double>(total);
  }
  return next;
}

inline Matrix estimated_obs_action_values(const Matrix& q_sa_hat, const Matrix& alpha_hat) {
  return obs_action_values(q_sa_hat, alpha_hat);
}

// Everything the state-informed solver estimates from one batch.
struct EstimatorState {
  std::vector<ObservationEstimate> q_obs_hat;  // stages 0..T
  std::vector<StateActionEstimate> q_sa_hat;  // stages 0..T-1
  std::vector<PosteriorEstimate> alpha_hat;  // stages 0..T-1; filled by the forward sweep
  std::vector<Matrix> n_tilde;  // stages 0..T-1
  std::vector<std::size_t> min_state_action_visits;  // per stage

  // Fraction of flagged cells across all estimated Qhat tables.
  double q_sa_fallback_fraction() const {
    std::size_t flagged = 0, cells = 0;
    for (const auto& q : q_sa_hat) {
      flagged += detail::count_flags(q.fallback);
      cells += q.fallback.size();
    }
    return cells ? static_cast<double>(flagged) / static_cast<double>(cells) : 0.0;
  }
};

// Estimator-backed evaluator for run_sweep_period; owns its batch. Construction fits Qhat
// backward under `policy`, qhat for every stage and alphahat_0.
class EstimatedSweepEvaluator {
 public:
  EstimatedSweepEvaluator(EpisodeDataset data, const DeterministicPolicy& policy,
                          std::span<const double> terminal,
                          NTildeWeighting weighting = NTildeWeighting::kAsPrinted)
      : data_(std::move(data)), terminal_(terminal.begin(), terminal.end()), weighting_(weighting),
        reward_floor_(min_observed_reward(data_)) {
    detail::require_states(data_, "EstimatedSweepEvaluator");
    const std::size_t T = data_.horizon();
    state_.q_obs_hat.reserve(T + 1);
    for (std::size_t t = 0; t <= T; ++t) state_.q_obs_hat.push_back(estimate_q_obs(data_, t));
    state_.q_sa_hat.resize(T);
    state_.min_state_action_visits.assign(T, 0);
    for (std::size_t t = T; t-- > 0;) fit_q(t, policy);
    state_.alpha_hat.resize(T);
    state_.n_tilde.resize(T);
    state_.n_tilde[0] = state_observation_counts(data_, 0);
    state_.alpha_hat[0] = estimate_alpha(state_.n_tilde[0]);
  }

  Matrix obs_action_values(std::size_t t) const {
    return estimated_obs_action_values(state_.q_sa_hat[t].values, state_.alpha_hat[t].alpha);
  }

  void after_forward_improvement(std::size_t t, const DeterministicPolicy& policy) {
    state_.n_tilde[t + 1] = propagate_n_tilde(data_, policy, t, state_.n_tilde[t], weighting_);
    state_.alpha_hat[t + 1] = estimate_alpha(state_.n_tilde[t + 1]);
  }

  void after_backward_improvement(std::size_t t, const DeterministicPolicy& policy) { fit_q(t - 1, policy); }

  const EstimatorState& state() const noexcept { return state_; }
  const EpisodeDataset& dataset() const noexcept { return data_; }

 private:
  void fit_q(std::size_t t, const DeterministicPolicy& policy) {
    const std::size_t T = data_.horizon();
    const bool last = t + 1 == T;
    state_.q_sa_hat[t] = estimate_q_sa(data_, policy, terminal_, last ? nullptr : &state_.q_obs_hat[t + 1],
                                       last ? nullptr : &state_.q_sa_hat[t + 1], t, reward_floor_);
    const StageCounts c = stage_counts(data_, t);
    state_.min_state_action_visits[t] = *std::min_element(c.n_sa.begin(), c.n_sa.end());
  }

  EpisodeDataset data_;
  std::vector<double> terminal_;
  NTildeWeighting weighting_;
  double reward_floor_;
  EstimatorState state_;
};

// ---------------------------------------------------------------------------
// Model-free traces

struct ModelFreeStep {
  std::size_t index = 0;
  std::size_t iteration = 0;  // 1-based
  std::size_t stage = 0;
  bool changed = false;
};

struct ModelFreeIteration {
  std::size_t iteration = 0;  // 0 is the initial policy
  double value = 0.0;  // exact L^pi of the policy after the iteration
  std::size_t changes = 0;  // stage improvements that changed the policy
  std::uint64_t episodes = 0;  // cumulative
  double fallback_fraction = 0.0;  // flagged estimator cells in this iteration
};

struct ModelFreeTrace {
  std::vector<ModelFreeStep> steps;
  std::vector<ModelFreeIteration> iterations;
  DeterministicPolicy policy;
  double final_value = 0.0;

  std::size_t change_count() const {
    std::size_t n = 0;
    for (const auto& s : steps) n += s.changed ? 1 : 0;
    return n;
  }
};

// Seed of the batch collected in iteration `iteration`.
inline std::uint64_t batch_seed(std::uint64_t seed, std::size_t iteration) {
  return stream(seed, iteration).next();
}

// ---------------------------------------------------------------------------
// State-informed policy iteration

struct StateInformedOptions {
  double epsilon = 0.5;
  std::size_t episodes = 5000;
  std::size_t iterations = 30;
  std::uint64_t seed = 0;
  NTildeWeighting weighting = NTildeWeighting::kAsPrinted;
  SimulationOptions simulation{};
  double improvement_tolerance = 1e-12;
};

// Shared loop: each iteration builds an evaluator for the current policy
// through make_evaluator(policy, iteration) and runs one forward and one
// backward sweep with it. `fallback_of(evaluator)` reports estimator quality.
template <class Factory, class FallbackOf>
ModelFreeTrace run_sweep_iterations(const PomdpModel& model, DeterministicPolicy policy,
                                    std::size_t iterations, std::uint64_t episodes_per_iteration,
                                    double tolerance, Factory&& make_evaluator, FallbackOf&& fallback_of) {
  require_compatible(model, policy);
  ModelFreeTrace trace;
  trace.iterations.push_back({0, episodic_return(model, policy), 0, 0, 0.0});
  for (std::size_t it = 1; it <= iterations; ++it) {
    auto evaluator = make_evaluator(static_cast<const DeterministicPolicy&>(policy), it);
    std::size_t changes = 0;
    const auto record = [&](std::size_t t, bool changed, const Matrix&) {
      trace.steps.push_back({trace.steps.size(), it, t, changed});
      changes += changed ? 1 : 0;
    };
    if (model.horizon() == 1) {
      const bool changed = greedy_improve(evaluator.obs_action_values(0), policy, 0, tolerance);
      record(0, changed, Matrix{});
    } else {
      run_sweep_period(evaluator, policy, tolerance, record);
    }
    trace.iterations.push_back({it, episodic_return(model, policy), changes,
                                it * episodes_per_iteration, fallback_of(evaluator)});
  }
  trace.final_value = trace.iterations.back().value;
  trace.policy = std::move(policy);
  return trace;
}

inline ModelFreeTrace solve_state_informed(const PomdpModel& model, DeterministicPolicy policy,
                                           const StateInformedOptions& options) {
  if (options.episodes == 0) throw std::invalid_argument("episodes per iteration must be positive");
  epsilon_soft(policy, options.epsilon);  // validates epsilon
  return run_sweep_iterations(
      model, std::move(policy), options.iterations, options.episodes, options.improvement_tolerance,
      [&](const DeterministicPolicy& current, std::size_t it) {
        return EstimatedSweepEvaluator(
            collect_state_informed(model, current, options.epsilon, options.episodes,
                                   batch_seed(options.seed, it), options.simulation),
            current, model.terminal(), options.weighting);
      },
      [](const EstimatedSweepEvaluator& e) { return e.state().q_sa_fallback_fraction(); });
}

// ---------------------------------------------------------------------------
// Observation-only policy iteration

// Monte Carlo Qbar_t(o, a) in values(o, a); visited[o*A + a] is false where
// no sample matched (value left at -inf).
struct McEstimate {
  Matrix values;
  std::vector<bool> visited;

  std::size_t unvisited_count() const { return visited.size() - detail::count_flags(visited); }
};

inline McEstimate mc_obs_action_values(const EpisodeDataset& data, std::size_t t) {
  detail::require_stage(t, data.horizon(), "mc_obs_action_values");
  const Sizes& sz = data.sizes();
  Matrix sum(sz.observations, sz.actions);
  std::vector<std::size_t> n(sz.observations * sz.actions, 0);
  for (std::size_t i = 0; i < data.episodes(); ++i) {
    const std::size_t o = data.observation(i, t), a = data.action(i, t);
    sum(o, a) += data.return_from(i, t);
    ++n[o * sz.actions + a];
  }
  McEstimate out{Matrix(sz.observations, sz.actions), std::vector<bool>(sz.observations * sz.actions, false)};
  for (std::size_t o = 0; o < sz.observations; ++o) {
    for (std::size_t a = 0; a < sz.actions; ++a) {
      const std::size_t k = n[o * sz.actions + a];
      out.visited[o * sz.actions + a] = k > 0;
      out.values(o, a) = k ? sum(o, a) / static_cast<double>(k) : -std::numeric_limits<double>::infinity();
    }
  }
  return out;
}

// Greedy step on a Monte Carlo estimate. Unvisited actions never win; an
// unvisited incumbent is kept.
inline bool improve_from_estimate(const McEstimate& est, DeterministicPolicy& policy, std::size_t t,
                                  double tolerance = 1e-12) {
  const std::size_t A = est.values.cols();
  bool changed = false;
  for (std::size_t o = 0; o < est.values.rows(); ++o) {
    const std::size_t incumbent = policy.action(t, o);
    if (!est.visited[o * A + incumbent]) continue;
    std::size_t best = incumbent;
    for (std::size_t a = 0; a < A; ++a) {
      if (est.visited[o * A + a] && est.values(o, a) > est.values(o, best)) best = a;
    }
    if (best != incumbent) {
      // lowest index among maximizers
      for (std::size_t a = 0; a < best; ++a)
        if (est.visited[o * A + a] && est.values(o, a) == est.values(o, best)) best = a;
      if (est.values(o, best) > est.values(o, incumbent) + tolerance) {
        policy.set(t, o, best);
        changed = true;
      }
    }
  }
  return changed;
}

struct ObservationOnlyOptions {
  std::size_t episodes = 5000;
  std::size_t iterations = 30;
  std::uint64_t seed = 0;
  // Defaults to the optimal schedule; ignored when T = 1.
  std::optional<UpdateSchedule> schedule;
  SimulationOptions simulation{};
  double improvement_tolerance = 1e-12;
};

inline ModelFreeTrace solve_observation_only(const PomdpModel& model, DeterministicPolicy policy,
                                             const ObservationOnlyOptions& options) {
  require_compatible(model, policy);
  if (options.episodes == 0) throw std::invalid_argument("episodes per iteration must be positive");
  const std::size_t T = model.horizon();
  UpdateSchedule schedule;
  if (T > 1) {
    schedule = options.schedule ? *options.schedule : optimal_schedule(T);
    if (schedule.horizon() != T) throw std::invalid_argument("schedule horizon does not match the model");
  }
  ModelFreeTrace trace;
  trace.iterations.push_back({0, episodic_return(model, policy), 0, 0, 0.0});
  for (std::size_t it = 1; it <= options.iterations; ++it) {
    const std::size_t t = T > 1 ? schedule[it - 1] : 0;
    const EpisodeDataset data = collect_observation_only(model, policy, t, options.episodes,
                                                         batch_seed(options.seed, it), options.simulation);
    const McEstimate est = mc_obs_action_values(data, t);
    const bool changed = improve_from_estimate(est, policy, t, options.improvement_tolerance);
    trace.steps.push_back({trace.steps.size(), it, t, changed});
    trace.iterations.push_back({it, episodic_return(model, policy), changed ? 1u : 0u,
                                it * options.episodes,
                                static_cast<double>(est.unvisited_count()) /
                                    static_cast<double>(est.visited.size())});
  }
  trace.final_value = trace.iterations.back().value;
  trace.policy = std::move(policy);
  return trace;
}

// ---------------------------------------------------------------------------
// Estimator quality against a known model

struct EstimatorErrors {
  double q_obs = 0.0;  // max |qhat - q| over visited states, stages 0..T
  double q_sa = 0.0;  // max |Qhat - Q| over visited pairs, stages 0..T-1
  double alpha = 0.0;  // max |alphahat - alpha| over observations with gamma > 0 and mass
};

// Estimates for a fixed policy (no improvement) compared with exact
// evaluation of the same policy.
inline EstimatorErrors estimator_errors(const PomdpModel& model, const EpisodeDataset& data,
                                        const DeterministicPolicy& policy,
                                        NTildeWeighting weighting = NTildeWeighting::kAsPrinted) {
  const std::size_t T = model.horizon(), S = model.num_states(), O = model.num_observations(),
                    A = model.num_actions();
  const EstimatedSweepEvaluator est(data, policy, model.terminal(), weighting);
  const EstimatorState& st = est.state();
  const EvaluationCache exact = full_evaluate(model, policy);
  EstimatorErrors err;
  for (std::size_t t = 0; t <= T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      if (st.q_obs_hat[t].fallback[s]) continue;
      for (std::size_t o = 0; o < O; ++o)
        err.q_obs = std::max(err.q_obs, std::abs(st.q_obs_hat[t].probs(s, o) - model.observation(t, s, o)));
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < A; ++a) {
        if (st.q_sa_hat[t].fallback[s * A + a]) continue;
        err.q_sa = std::max(err.q_sa, std::abs(st.q_sa_hat[t].values(s, a) - exact.q_sa[t](s, a)));
      }
  }
  Matrix n_tilde = state_observation_counts(data, 0);
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) n_tilde = propagate_n_tilde(data, policy, t - 1, n_tilde, weighting);
    const PosteriorEstimate a_hat = estimate_alpha(n_tilde);
    for (std::size_t o = 0; o < O; ++o) {
      if (a_hat.fallback[o] || !(exact.gamma[t][o] > 0.0)) continue;
      for (std::size_t s = 0; s < S; ++s)
        err.alpha = std::max(err.alpha, std::abs(a_hat.alpha(o, s) - exact.alpha[t](o, s)));
    }
  }
  return err;
}

}  // namespace mempi
