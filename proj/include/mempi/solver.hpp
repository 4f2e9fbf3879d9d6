#pragma once

#include <algorithm>
#include <concepts>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mempi/evaluation.hpp"
#include "mempi/matrix.hpp"
#include "mempi/model.hpp"
#include "mempi/schedule.hpp"

namespace mempi {

struct ImprovementRecord {
  std::size_t index = 0;  // l
  std::size_t stage = 0;  // tau_l
  bool changed = false;
  double value = 0.0;  // L^pi after the step
  std::uint64_t mu_updates = 0;  // cumulative, including initialization
  std::uint64_t q_updates = 0;
};

enum class Termination {
  kConverged,  // no policy change over a full period
  kPeriodCap,  // max_periods reached first
  kSingleStage,  // T = 1: one improvement at stage 0 is final
};

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::kConverged: return "converged";
    case Termination::kPeriodCap: return "period_cap";
    case Termination::kSingleStage: return "single_stage";
  }
  return "unknown";
}

struct SolveTrace {
  std::vector<ImprovementRecord> steps;
  DeterministicPolicy policy;
  double initial_value = 0.0;
  double final_value = 0.0;  // exact L^pi of `policy`
  Termination termination = Termination::kConverged;
  // L^pi identical at the start and end of the final period.
  bool value_stable = false;
  std::size_t periods = 0;

  std::size_t change_count() const {
    std::size_t n = 0;
    for (const auto& s : steps) n += s.changed ? 1 : 0;
    return n;
  }
};

// What an observer sees just before stage `stage` is improved.
struct StepObservation {
  std::size_t index;
  std::size_t stage;
  const Matrix& obs_action_values;
  const DeterministicPolicy& policy;
};

struct SolveOptions {
  std::size_t max_periods = 1000;
  // solve_generic keeps going for at least this many periods, even when
  // already converged; used to measure per-period operation counts.
  std::size_t min_periods = 0;
  double improvement_tolerance = 1e-12;
  std::function<void(const StepObservation&)> observer;
};

// pi_t(o) <- argmax_a Qbar_t(o,a). The incumbent is kept unless some action
// beats it by more than `tolerance`; among maximizers the lowest index wins.
inline bool greedy_improve(const Matrix& qbar, DeterministicPolicy& policy, std::size_t t,
                           double tolerance = 1e-12) {
  bool changed = false;
  auto actions = policy.stage(t);
  for (std::size_t o = 0; o < qbar.rows(); ++o) {
    const auto row = qbar.row(o);
    std::size_t best = 0;
    for (std::size_t a = 1; a < row.size(); ++a)
      if (row[a] > row[best]) best = a;
    if (best != actions[o] && row[best] > row[actions[o]] + tolerance) {
      actions[o] = best;
      changed = true;
    }
  }
  return changed;
}

struct StageImprovement {
  DeterministicPolicy policy;
  bool changed = false;
};

inline StageImprovement improve_stage(const PomdpModel& model, const EvaluationCache& cache,
                                      const DeterministicPolicy& policy, std::size_t t,
                                      double tolerance = 1e-12) {
  detail::require_stage(t, model.horizon(), "improve_stage");
  StageImprovement out{policy, false};
  out.changed = greedy_improve(cached_obs_action_values(cache, t), out.policy, t, tolerance);
  return out;
}

namespace detail {

// The step values come from the unrolled identity at different stages, so
// equal returns can differ in the last bits.
inline bool same_value(double a, double b) {
  return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a));
}

// L^pi right after improving stage t, from quantities the improvement did not
// touch: rho_0..rho_{t-1}, gamma_t and Qbar_t.
inline double value_after_improvement(const PomdpModel& model, const DeterministicPolicy& policy,
                                      const EvaluationCache& cache, std::size_t t,
                                      const Matrix& qbar) {
  double value = 0.0;
  for (std::size_t i = 0; i < t; ++i) value += stage_expected_reward(model, policy, i, cache.mu[i]);
  for (std::size_t o = 0; o < model.num_observations(); ++o)
    value += cache.gamma[t][o] * qbar(o, policy.action(t, o));
  return value;
}

inline SolveTrace solve_single_stage(const PomdpModel& model, DeterministicPolicy policy,
                                     const SolveOptions& options) {
  SolveTrace trace;
  EvaluationCache cache = full_evaluate(model, policy);
  trace.initial_value = episodic_return(model, policy);
  const Matrix qbar = cached_obs_action_values(cache, 0);
  if (options.observer) options.observer(StepObservation{0, 0, qbar, policy});
  const bool changed = greedy_improve(qbar, policy, 0, options.improvement_tolerance);
  trace.steps.push_back({0, 0, changed, value_after_improvement(model, policy, cache, 0, qbar),
                         cache.mu_update_count, cache.q_update_count});
  trace.policy = std::move(policy);
  trace.final_value = episodic_return(model, trace.policy);
  trace.termination = Termination::kSingleStage;
  trace.value_stable = !changed;
  trace.periods = 1;
  return trace;
}

}  // namespace detail

// Memoryless policy iteration for an arbitrary valid periodic schedule.
// Before each improvement only the stages between the previous and the
// current schedule entry are recomputed (mu when moving forward, Q when moving
// backward). Stops once the policy has not changed over M consecutive steps.
inline SolveTrace solve_generic(const PomdpModel& model, DeterministicPolicy policy,
                                const UpdateSchedule& schedule, const SolveOptions& options = {}) {
  require_compatible(model, policy);
  if (model.horizon() == 1) return detail::solve_single_stage(model, std::move(policy), options);
  if (schedule.horizon() != model.horizon()) {
    throw std::invalid_argument("schedule horizon does not match the model");
  }
  const std::size_t M = schedule.period();
  SolveTrace trace;
  trace.initial_value = episodic_return(model, policy);
  EvaluationCache cache = full_evaluate(model, policy);
  std::size_t quiet_steps = 0;
  trace.termination = Termination::kPeriodCap;
  for (std::size_t l = 0; l < options.max_periods * M; ++l) {
    const std::size_t t = schedule[l];
    refresh_mu(cache, model, policy, t);
    refresh_q(cache, model, policy, t);
    const Matrix qbar = cached_obs_action_values(cache, t);
    if (options.observer) options.observer(StepObservation{l, t, qbar, policy});
    const bool changed = greedy_improve(qbar, policy, t, options.improvement_tolerance);
    const double value = detail::value_after_improvement(model, policy, cache, t, qbar);
    invalidate_stage(cache, t);
    trace.steps.push_back({l, t, changed, value, cache.mu_update_count, cache.q_update_count});
    quiet_steps = changed ? 0 : quiet_steps + 1;
    if (quiet_steps >= M && l + 1 >= options.min_periods * M) {
      trace.termination = Termination::kConverged;
      break;
    }
  }
  trace.periods = (trace.steps.size() + M - 1) / M;
  const std::size_t n = trace.steps.size();
  const double period_start = n > M ? trace.steps[n - 1 - M].value : trace.initial_value;
  trace.value_stable = n > 0 && detail::same_value(trace.steps.back().value, period_start);
  trace.policy = std::move(policy);
  trace.final_value = episodic_return(model, trace.policy);
  return trace;
}

// An evaluator supplies Qbar for a stage and repairs its state after an
// improvement: forward improvements refresh the next posterior (mu_{t+1} or
// its estimate), backward improvements refresh Q_{t-1}.
template <class E>
concept SweepEvaluator = requires(E& e, const DeterministicPolicy& p, std::size_t t) {
  { e.obs_action_values(t) } -> std::convertible_to<Matrix>;
  e.after_forward_improvement(t, p);
  e.after_backward_improvement(t, p);
};

// Called after each improvement with the stage, whether pi_t changed, and the
// Qbar used for the decision.
using SweepCallback = std::function<void(std::size_t stage, bool changed, const Matrix& qbar)>;

// One forward sweep t = 0..T-2 followed by one backward sweep t = T-1..1.
// Returns whether any stage changed.
template <SweepEvaluator Evaluator>
bool run_sweep_period(Evaluator& evaluator, DeterministicPolicy& policy, double tolerance,
                      const SweepCallback& on_step) {
  const std::size_t T = policy.horizon();
  bool any_change = false;
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const Matrix qbar = evaluator.obs_action_values(t);
    const bool changed = greedy_improve(qbar, policy, t, tolerance);
    evaluator.after_forward_improvement(t, policy);
    any_change = any_change || changed;
    if (on_step) on_step(t, changed, qbar);
  }
  for (std::size_t t = T - 1; t >= 1; --t) {
    const Matrix qbar = evaluator.obs_action_values(t);
    const bool changed = greedy_improve(qbar, policy, t, tolerance);
    evaluator.after_backward_improvement(t, policy);
    any_change = any_change || changed;
    if (on_step) on_step(t, changed, qbar);
  }
  return any_change;
}

// Exact model-based evaluator for run_sweep_period: one mu-update or one
// Q-update per improvement. Starts from a full evaluation of `policy`.
class ExactSweepEvaluator {
 public:
  ExactSweepEvaluator(const PomdpModel& model, const DeterministicPolicy& policy)
      : model_(&model), cache_(full_evaluate(model, policy)) {}

  Matrix obs_action_values(std::size_t t) const { return cached_obs_action_values(cache_, t); }

  void after_forward_improvement(std::size_t t, const DeterministicPolicy& policy) {
    invalidate_stage(cache_, t);
    refresh_mu(cache_, *model_, policy, t + 1);
  }

  void after_backward_improvement(std::size_t t, const DeterministicPolicy& policy) {
    invalidate_stage(cache_, t);
    refresh_q(cache_, *model_, policy, t - 1);
  }

  const EvaluationCache& cache() const noexcept { return cache_; }

 private:
  const PomdpModel* model_;
  EvaluationCache cache_;
};

// Efficient memoryless policy iteration: alternating forward and backward
// sweeps after one full evaluation of the initial policy.
inline SolveTrace solve_efficient(const PomdpModel& model, DeterministicPolicy policy,
                                  const SolveOptions& options = {}) {
  require_compatible(model, policy);
  if (model.horizon() == 1) return detail::solve_single_stage(model, std::move(policy), options);
  SolveTrace trace;
  trace.initial_value = episodic_return(model, policy);
  ExactSweepEvaluator evaluator(model, policy);
  const EvaluationCache& cache = evaluator.cache();
  double value = trace.initial_value;
  std::size_t index = 0;
  const auto record = [&](std::size_t t, bool changed, const Matrix& qbar) {
    value = detail::value_after_improvement(model, policy, cache, t, qbar);
    trace.steps.push_back({index++, t, changed, value, cache.mu_update_count, cache.q_update_count});
  };
  trace.termination = Termination::kPeriodCap;
  for (std::size_t period = 0; period < options.max_periods; ++period) {
    const double value_at_start = value;
    bool changed = false;
    if (options.observer) {
      // The observer needs Qbar before the decision; wrap the evaluator.
      struct Observed {
        ExactSweepEvaluator& inner;
        const DeterministicPolicy& policy;
        const SolveOptions& options;
        const std::size_t& index;
        Matrix obs_action_values(std::size_t t) {
          Matrix qbar = inner.obs_action_values(t);
          options.observer(StepObservation{index, t, qbar, policy});
          return qbar;
        }
        void after_forward_improvement(std::size_t t, const DeterministicPolicy& p) {
          inner.after_forward_improvement(t, p);
        }
        void after_backward_improvement(std::size_t t, const DeterministicPolicy& p) {
          inner.after_backward_improvement(t, p);
        }
      } wrapped{evaluator, policy, options, index};
      changed = run_sweep_period(wrapped, policy, options.improvement_tolerance, record);
    } else {
      changed = run_sweep_period(evaluator, policy, options.improvement_tolerance, record);
    }
    trace.periods = period + 1;
    if (!changed) {
      trace.termination = Termination::kConverged;
      trace.value_stable = detail::same_value(value, value_at_start);
      break;
    }
  }
  trace.policy = std::move(policy);
  trace.final_value = episodic_return(model, trace.policy);
  return trace;
}

}  // namespace mempi
