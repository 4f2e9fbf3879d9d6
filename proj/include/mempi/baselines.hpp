#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mempi/evaluation.hpp"
#include "mempi/matrix.hpp"
#include "mempi/model.hpp"
#include "mempi/random.hpp"
#include "mempi/simulation.hpp"

namespace mempi {

// ---------------------------------------------------------------------------
// Exhaustive search over deterministic memoryless policies

// |A|^(|O| T), as a double (exact up to 2^53).
inline double policy_count(const Sizes& sizes) {
  return std::pow(static_cast<double>(sizes.actions),
                  static_cast<double>(sizes.observations * sizes.horizon));
}

class PolicySpaceTooLarge : public std::length_error {
 public:
  PolicySpaceTooLarge(double count, double limit)
      : std::length_error(message(count, limit)), count_(count) {}
  double count() const noexcept { return count_; }

 private:
  static std::string message(double count, double limit) {
    std::ostringstream os;
    os.precision(17);
    os << "exhaustive search over " << count << " policies exceeds the limit of " << limit;
    return os.str();
  }
  double count_;
};

inline constexpr double kDefaultMaxPolicies = 33554432.0;  // 2^25

struct ExhaustiveResult {
  DeterministicPolicy policy;
  double value = 0.0;
  std::uint64_t policies_evaluated = 0;
};

// Enumerates every policy with an odometer over the (t, o) digits, digit
// index t*|O| + o, fastest digit first. Only Q stages below the highest digit
// that moved are recomputed. Ties keep the earliest policy in odometer order.
inline ExhaustiveResult exhaustive_search(const PomdpModel& model,
                                          double max_policies = kDefaultMaxPolicies) {
  const double count = policy_count(model.sizes());
  if (count > max_policies) throw PolicySpaceTooLarge(count, max_policies);
  const std::size_t T = model.horizon(), O = model.num_observations(), A = model.num_actions();
  const std::size_t digits = T * O;
  DeterministicPolicy policy(model.sizes());
  std::vector<Matrix> q(T);
  for (std::size_t t = T; t-- > 0;) q[t] = q_backward_step(model, policy, t, t + 1 < T ? q[t + 1] : Matrix{});
  const auto value_of = [&] { return dot(model.initial(), stage_value(model, policy, 0, q[0])); };

  ExhaustiveResult best{policy, value_of(), 1};
  for (;;) {
    std::size_t d = 0;
    for (; d < digits; ++d) {
      auto& action = policy.stage(d / O)[d % O];
      if (++action < A) break;
      action = 0;
    }
    if (d == digits) break;
    for (std::size_t t = d / O; t-- > 0;) q[t] = q_backward_step(model, policy, t, q[t + 1]);
    const double value = value_of();
    ++best.policies_evaluated;
    if (value > best.value) {
      best.value = value;
      best.policy = policy;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Model-based softmax policy gradient

struct PgEvaluation {
  double value = 0.0;
  std::vector<double> gradient;  // same layout as SoftmaxPolicy::parameters()
};

// Exact L(theta) and its gradient. With Qbar and gamma from one forward and
// one backward pass of the mixture policy,
//   dL/dtheta[t][o][a] = gamma_t(o) pi_t(a|o) (Qbar_t(o,a) - sum_b pi_t(b|o) Qbar_t(o,b)).
inline PgEvaluation pg_return_and_gradient(const PomdpModel& model, const SoftmaxPolicy& policy) {
  const StochasticPolicy mixture = policy.to_stochastic();
  const EvaluationCache cache = full_evaluate(model, mixture);
  const std::size_t T = model.horizon(), O = model.num_observations(), A = model.num_actions();
  PgEvaluation out;
  out.value = dot(model.initial(), stage_value(model, mixture, 0, cache.q_sa[0]));
  out.gradient.assign(T * O * A, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const Matrix qbar = obs_action_values(cache.q_sa[t], cache.alpha[t]);
    for (std::size_t o = 0; o < O; ++o) {
      const auto pi = mixture.distribution(t, o);
      const double mean = dot(pi, qbar.row(o));
      for (std::size_t a = 0; a < A; ++a) {
        out.gradient[(t * O + o) * A + a] = cache.gamma[t][o] * pi[a] * (qbar(o, a) - mean);
      }
    }
  }
  return out;
}

inline double pg_return(const PomdpModel& model, const SoftmaxPolicy& policy) {
  return episodic_return(model, policy.to_stochastic());
}

struct GradientRunConfig {
  double initial_step = 1.0;
  double armijo_c = 1e-4;
  double backtrack_factor = 0.5;
  double improvement_threshold = 1e-8;
  std::size_t max_steps = 10000;
  // Line searches after the first start from step_growth times the last
  // accepted step; 1 restarts from initial_step every time.
  double step_growth = 2.0;
  // Initial logits are uniform on [-init_scale, init_scale]; 0 gives the
  // uniform policy.
  double init_scale = 0.0;
  double min_step = 1e-14;

  void require_valid() const {
    if (!(initial_step > 0.0) || !(armijo_c > 0.0 && armijo_c < 1.0) ||
        !(backtrack_factor > 0.0 && backtrack_factor < 1.0) || !(improvement_threshold > 0.0) ||
        max_steps == 0 || !(step_growth >= 1.0) || init_scale < 0.0) {
      throw std::invalid_argument("invalid gradient run configuration");
    }
  }
};

struct PgStep {
  std::size_t step = 0;
  double value = 0.0;
  // Each gradient step improves all T stages at once and is charged T.
  std::size_t stage_improvements = 0;
  // Line-search evaluations of L so far; recorded, not charged.
  std::size_t evaluations = 0;
  double step_size = 0.0;
};

struct PgTrace {
  std::vector<PgStep> steps;  // steps[0] is the initial point
  SoftmaxPolicy policy;
  double final_value = 0.0;
  bool converged = false;
};

inline PgTrace pg_solve(const PomdpModel& model, const GradientRunConfig& config, std::uint64_t seed) {
  config.require_valid();
  const std::size_t T = model.horizon();
  PgTrace trace;
  trace.policy = SoftmaxPolicy(model.sizes());
  if (config.init_scale > 0.0) {
    Rng rng(seed);
    for (auto& th : trace.policy.parameters()) th = rng.uniform(-config.init_scale, config.init_scale);
  }
  PgEvaluation current = pg_return_and_gradient(model, trace.policy);
  std::size_t evaluations = 1;
  trace.steps.push_back({0, current.value, 0, evaluations, 0.0});
  double last_step = config.initial_step;
  SoftmaxPolicy candidate = trace.policy;
  for (std::size_t k = 1; k <= config.max_steps; ++k) {
    double g2 = 0.0;
    for (double g : current.gradient) g2 += g * g;
    if (g2 == 0.0) {
      trace.converged = true;
      break;
    }
    double step = k == 1 || config.step_growth == 1.0 ? config.initial_step
                                                      : config.step_growth * last_step;
    double next_value = 0.0;
    bool accepted = false;
    while (step >= config.min_step) {
      const auto theta = trace.policy.parameters();
      auto trial = candidate.parameters();
      for (std::size_t i = 0; i < theta.size(); ++i) trial[i] = theta[i] + step * current.gradient[i];
      next_value = pg_return(model, candidate);
      ++evaluations;
      if (next_value >= current.value + config.armijo_c * step * g2) {
        accepted = true;
        break;
      }
      step *= config.backtrack_factor;
    }
    if (!accepted) {
      trace.converged = true;
      break;
    }
    const double improvement = next_value - current.value;
    std::swap(trace.policy, candidate);
    current = pg_return_and_gradient(model, trace.policy);
    ++evaluations;
    last_step = step;
    trace.steps.push_back({k, current.value, k * T, evaluations, step});
    if (improvement < config.improvement_threshold) {
      trace.converged = true;
      break;
    }
  }
  trace.final_value = current.value;
  return trace;
}

// ---------------------------------------------------------------------------
// REINFORCE from observation-only episodes

struct ReinforceOptions {
  double step_size = 0.05;
  std::size_t episodes_per_iteration = 5000;
  std::size_t iterations = 30;
  SimulationOptions simulation{};
};

struct ReinforceIteration {
  std::size_t iteration = 0;
  double value = 0.0;  // exact L of the current stochastic policy
  std::size_t episodes = 0;  // cumulative
};

struct ReinforceTrace {
  std::vector<ReinforceIteration> iterations;  // iterations[0] is the initial policy
  SoftmaxPolicy policy;
  double final_value = 0.0;
};

// One gradient step per episode, weighting every score term by the whole
// episode return (no baseline):
//   theta[t][o_t][b] += step * G * (1{b = a_t} - pi_t(b|o_t)).
inline ReinforceTrace reinforce_solve(const PomdpModel& model, SoftmaxPolicy policy,
                                      const ReinforceOptions& options, std::uint64_t seed) {
  require_compatible(model, policy);
  const std::size_t T = model.horizon(), A = model.num_actions();
  ReinforceTrace trace;
  trace.iterations.push_back({0, pg_return(model, policy), 0});
  std::vector<std::vector<double>> probs(T, std::vector<double>(A));
  std::vector<std::size_t> obs(T), acts(T);
  std::uint64_t episode = 0;
  for (std::size_t it = 1; it <= options.iterations; ++it) {
    for (std::size_t e = 0; e < options.episodes_per_iteration; ++e, ++episode) {
      Rng rng = stream(seed, episode);
      std::size_t s = rng.categorical(model.initial());
      double ret = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t o = rng.categorical(model.observation_row(t, s));
        policy.probabilities(t, o, probs[t]);
        const std::size_t a = rng.categorical(probs[t]);
        double r = model.reward(t, s, a);
        if (options.simulation.reward_noise > 0.0) {
          r += rng.uniform(-options.simulation.reward_noise, options.simulation.reward_noise);
        }
        ret += r;
        obs[t] = o;
        acts[t] = a;
        s = rng.categorical(model.transition_row(t, s, a));
      }
      ret += model.terminal()[s];
      if (options.step_size == 0.0) continue;
      for (std::size_t t = 0; t < T; ++t) {
        auto theta = policy.logits(t, obs[t]);
        for (std::size_t b = 0; b < A; ++b) {
          const double score = (b == acts[t] ? 1.0 : 0.0) - probs[t][b];
          theta[b] += options.step_size * ret * score;
        }
      }
    }
    trace.iterations.push_back({it, pg_return(model, policy), it * options.episodes_per_iteration});
  }
  trace.final_value = trace.iterations.back().value;
  trace.policy = std::move(policy);
  return trace;
}

}  // namespace mempi
