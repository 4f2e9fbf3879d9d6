#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mempi/matrix.hpp"
#include "mempi/model.hpp"

namespace mempi {

// Anything that can be evaluated exactly: a deterministic table or a tabular
// action distribution.
template <class P>
concept DeterministicTable = requires(const P& p, std::size_t t, std::size_t o) {
  { p.action(t, o) } -> std::convertible_to<std::size_t>;
};

template <class P>
concept ActionDistributionTable = requires(const P& p, std::size_t t, std::size_t o) {
  { p.distribution(t, o) } -> std::convertible_to<std::span<const double>>;
};

template <class P>
concept EvaluablePolicy = DeterministicTable<P> || ActionDistributionTable<P>;

namespace detail {

inline void require_stage(std::size_t t, std::size_t limit, const char* what) {
  if (t >= limit) {
    throw std::out_of_range(std::string(what) + ": stage " + std::to_string(t) +
                            " out of range (limit " + std::to_string(limit) + ")");
  }
}

}  // namespace detail

// V_t(s) = sum_o q_t(o|s) sum_a pi_t(a|o) Q_t(s,a), for t < T.
template <EvaluablePolicy Policy>
std::vector<double> stage_value(const PomdpModel& model, const Policy& policy, std::size_t t,
                                const Matrix& q_t) {
  const std::size_t S = model.num_states(), O = model.num_observations();
  std::vector<double> value(S, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    const auto obs = model.observation_row(t, s);
    const auto q_row = q_t.row(s);
    double v = 0.0;
    for (std::size_t o = 0; o < O; ++o) {
      if constexpr (DeterministicTable<Policy>) {
        v += obs[o] * q_row[policy.action(t, o)];
      } else {
        v += obs[o] * dot(policy.distribution(t, o), q_row);
      }
    }
    value[s] = v;
  }
  return value;
}

// Q_t from Q_{t+1}. At t = T-1 the downstream value is the terminal value
// V_T itself and `q_next` is not read.
template <EvaluablePolicy Policy>
Matrix q_backward_step(const PomdpModel& model, const Policy& policy, std::size_t t,
                       const Matrix& q_next) {
  const std::size_t T = model.horizon();
  detail::require_stage(t, T, "q_backward_step");
  const std::size_t S = model.num_states(), A = model.num_actions();
  std::vector<double> downstream;
  std::span<const double> next_value;
  if (t + 1 == T) {
    next_value = model.terminal();
  } else {
    if (q_next.rows() != S || q_next.cols() != A) {
      throw std::invalid_argument("q_backward_step: Q_{t+1} has the wrong shape");
    }
    downstream = stage_value(model, policy, t + 1, q_next);
    next_value = downstream;
  }
  Matrix q(S, A);
  for (std::size_t s = 0; s < S; ++s) {
    const auto rewards = model.reward_row(t, s);
    for (std::size_t a = 0; a < A; ++a) {
      q(s, a) = rewards[a] + dot(model.transition_row(t, s, a), next_value);
    }
  }
  return q;
}

// mu_{t+1}(s) = sum_{s'} sum_{o'} sum_a p_t(s|s',a) pi_t(a|o') q_t(o'|s') mu_t(s').
template <EvaluablePolicy Policy>
std::vector<double> mu_forward_step(const PomdpModel& model, const Policy& policy, std::size_t t,
                                    std::span<const double> mu_t) {
  detail::require_stage(t, model.horizon(), "mu_forward_step");
  const std::size_t S = model.num_states(), A = model.num_actions(), O = model.num_observations();
  std::vector<double> next(S, 0.0);
  std::vector<double> action_mass(A);
  for (std::size_t from = 0; from < S; ++from) {
    if (mu_t[from] == 0.0) continue;
    std::fill(action_mass.begin(), action_mass.end(), 0.0);
    const auto obs = model.observation_row(t, from);
    for (std::size_t o = 0; o < O; ++o) {
      if constexpr (DeterministicTable<Policy>) {
        action_mass[policy.action(t, o)] += obs[o];
      } else {
        const auto dist = policy.distribution(t, o);
        for (std::size_t a = 0; a < A; ++a) action_mass[a] += obs[o] * dist[a];
      }
    }
    for (std::size_t a = 0; a < A; ++a) {
      const double w = action_mass[a] * mu_t[from];
      if (w == 0.0) continue;
      const auto row = model.transition_row(t, from, a);
      for (std::size_t s = 0; s < S; ++s) next[s] += w * row[s];
    }
  }
  return next;
}

// Single-step Bayes posterior at stage t. alpha is stored by observation:
// alpha(o, s) = alpha_t(s|o). Observations with gamma_t(o) = 0 get a uniform
// posterior; they carry no weight in the return.
struct Posterior {
  std::vector<double> gamma;
  Matrix alpha;
};

inline Posterior posterior(const PomdpModel& model, std::size_t t, std::span<const double> mu_t) {
  detail::require_stage(t, model.horizon() + 1, "posterior");
  const std::size_t S = model.num_states(), O = model.num_observations();
  Posterior out{std::vector<double>(O, 0.0), Matrix(O, S)};
  for (std::size_t s = 0; s < S; ++s) {
    const auto obs = model.observation_row(t, s);
    for (std::size_t o = 0; o < O; ++o) {
      const double joint = obs[o] * mu_t[s];
      out.alpha(o, s) = joint;
      out.gamma[o] += joint;
    }
  }
  for (std::size_t o = 0; o < O; ++o) {
    auto row = out.alpha.row(o);
    if (out.gamma[o] > 0.0) {
      for (auto& x : row) x /= out.gamma[o];
    } else {
      std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(S));
    }
  }
  return out;
}

// Qbar_t(o,a) = sum_s Q_t(s,a) alpha_t(s|o).
inline Matrix obs_action_values(const Matrix& q_sa, const Matrix& alpha) {
  if (alpha.cols() != q_sa.rows()) {
    throw std::invalid_argument("obs_action_values: alpha and Q disagree on |S|");
  }
  const std::size_t O = alpha.rows(), S = q_sa.rows(), A = q_sa.cols();
  Matrix out(O, A);
  for (std::size_t o = 0; o < O; ++o) {
    const auto post = alpha.row(o);
    auto dst = out.row(o);
    for (std::size_t s = 0; s < S; ++s) {
      const double w = post[s];
      if (w == 0.0) continue;
      const auto q_row = q_sa.row(s);
      for (std::size_t a = 0; a < A; ++a) dst[a] += w * q_row[a];
    }
  }
  return out;
}

// Expected stage reward sum_s mu_t(s) sum_o q_t(o|s) sum_a pi_t(a|o) r_t(s,a).
template <EvaluablePolicy Policy>
double stage_expected_reward(const PomdpModel& model, const Policy& policy, std::size_t t,
                             std::span<const double> mu_t) {
  const std::size_t S = model.num_states(), O = model.num_observations();
  double total = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    if (mu_t[s] == 0.0) continue;
    const auto obs = model.observation_row(t, s);
    const auto rewards = model.reward_row(t, s);
    double expected = 0.0;
    for (std::size_t o = 0; o < O; ++o) {
      if constexpr (DeterministicTable<Policy>) {
        expected += obs[o] * rewards[policy.action(t, o)];
      } else {
        expected += obs[o] * dot(policy.distribution(t, o), rewards);
      }
    }
    total += mu_t[s] * expected;
  }
  return total;
}

// L^pi = sum_s mu_0(s) sum_o q_0(o|s) Q_0(s, pi_0(o)) after a full backward pass.
template <EvaluablePolicy Policy>
double episodic_return(const PomdpModel& model, const Policy& policy) {
  require_compatible(model, policy);
  Matrix q;
  for (std::size_t t = model.horizon(); t-- > 0;) q = q_backward_step(model, policy, t, q);
  return dot(model.initial(), stage_value(model, policy, 0, q));
}

// ---------------------------------------------------------------------------
// Incremental evaluation cache

// mu_t depends on pi_0..pi_{t-1}; Q_t depends on pi_{t+1}..pi_{T-1}. Valid mu
// stages therefore always form a prefix and valid Q stages a suffix, and a
// change at stage k invalidates mu_{k+1..T} and Q_{0..k-1}.
struct EvaluationCache {
  std::vector<std::vector<double>> mu;  // stages 0..T
  std::vector<std::vector<double>> gamma;  // stages 0..T-1, valid with mu
  std::vector<Matrix> alpha;  // stages 0..T-1, alpha_t(o, s)
  std::vector<Matrix> q_sa;  // stages 0..T-1
  std::vector<bool> mu_valid;
  std::vector<bool> q_valid;
  std::uint64_t mu_update_count = 0;
  std::uint64_t q_update_count = 0;

  std::size_t horizon() const noexcept { return q_sa.size(); }
  bool ready(std::size_t t) const { return mu_valid[t] && q_valid[t]; }
};

namespace detail {

inline void store_posterior(EvaluationCache& cache, const PomdpModel& model, std::size_t t) {
  if (t >= cache.horizon()) return;
  auto post = posterior(model, t, cache.mu[t]);
  cache.gamma[t] = std::move(post.gamma);
  cache.alpha[t] = std::move(post.alpha);
}

}  // namespace detail

// Cache holding only mu_0 (which no policy affects).
inline EvaluationCache make_cache(const PomdpModel& model) {
  const std::size_t T = model.horizon();
  EvaluationCache cache;
  cache.mu.resize(T + 1);
  cache.gamma.resize(T);
  cache.alpha.resize(T);
  cache.q_sa.resize(T);
  cache.mu_valid.assign(T + 1, false);
  cache.q_valid.assign(T, false);
  cache.mu[0].assign(model.initial().begin(), model.initial().end());
  cache.mu_valid[0] = true;
  detail::store_posterior(cache, model, 0);
  return cache;
}

// Recompute mu forward from the last valid stage up to t. Returns the number
// of single-stage updates performed.
template <EvaluablePolicy Policy>
std::size_t refresh_mu(EvaluationCache& cache, const PomdpModel& model, const Policy& policy,
                       std::size_t t) {
  std::size_t k = t;
  while (!cache.mu_valid[k]) --k;
  const std::size_t updates = t - k;
  for (std::size_t i = k; i < t; ++i) {
    cache.mu[i + 1] = mu_forward_step(model, policy, i, cache.mu[i]);
    cache.mu_valid[i + 1] = true;
    detail::store_posterior(cache, model, i + 1);
  }
  cache.mu_update_count += updates;
  return updates;
}

// Recompute Q backward from the first valid stage down to t.
template <EvaluablePolicy Policy>
std::size_t refresh_q(EvaluationCache& cache, const PomdpModel& model, const Policy& policy,
                      std::size_t t) {
  const std::size_t T = cache.horizon();
  std::size_t k = t;
  while (k < T && !cache.q_valid[k]) ++k;
  const std::size_t updates = k - t;
  for (std::size_t i = k; i-- > t;) {
    cache.q_sa[i] = q_backward_step(model, policy, i, i + 1 < T ? cache.q_sa[i + 1] : Matrix{});
    cache.q_valid[i] = true;
  }
  cache.q_update_count += updates;
  return updates;
}

// Marks everything that depends on pi_t as stale.
inline void invalidate_stage(EvaluationCache& cache, std::size_t t) {
  for (std::size_t i = t + 1; i < cache.mu_valid.size(); ++i) cache.mu_valid[i] = false;
  for (std::size_t i = 0; i < t; ++i) cache.q_valid[i] = false;
}

inline Matrix cached_obs_action_values(const EvaluationCache& cache, std::size_t t) {
  if (t >= cache.horizon() || !cache.ready(t)) {
    throw std::logic_error("evaluation cache is stale at stage " + std::to_string(t));
  }
  return obs_action_values(cache.q_sa[t], cache.alpha[t]);
}

// Forward pass for mu and backward pass for Q. Records exactly T updates of
// each kind.
template <EvaluablePolicy Policy>
EvaluationCache full_evaluate(const PomdpModel& model, const Policy& policy) {
  require_compatible(model, policy);
  EvaluationCache cache = make_cache(model);
  refresh_mu(cache, model, policy, model.horizon());
  refresh_q(cache, model, policy, 0);
  return cache;
}

// sum_{i<k} rho_i + sum_o gamma_k(o) sum_a pi_k(a|o) Qbar_k(o,a); equals L^pi
// for every k when the cache matches the policy.
template <EvaluablePolicy Policy>
double unrolled_return(const PomdpModel& model, const Policy& policy, std::size_t k,
                       const EvaluationCache& cache) {
  detail::require_stage(k, model.horizon(), "unrolled_return");
  if (!cache.ready(k)) throw std::logic_error("unrolled_return: cache stale at stage k");
  double partial = 0.0;
  for (std::size_t i = 0; i < k; ++i) partial += stage_expected_reward(model, policy, i, cache.mu[i]);
  const Matrix qbar = obs_action_values(cache.q_sa[k], cache.alpha[k]);
  double tail = 0.0;
  for (std::size_t o = 0; o < model.num_observations(); ++o) {
    if constexpr (DeterministicTable<Policy>) {
      tail += cache.gamma[k][o] * qbar(o, policy.action(k, o));
    } else {
      tail += cache.gamma[k][o] * dot(policy.distribution(k, o), qbar.row(o));
    }
  }
  return partial + tail;
}

// ---------------------------------------------------------------------------
// Local optimality

struct Deviation {
  std::size_t t = 0;
  std::size_t o = 0;
  std::size_t action = 0;
  double gain = 0.0;  // Qbar_t(o, action) - Qbar_t(o, pi_t(o))
};

struct LocalOptimality {
  bool optimal = true;
  std::optional<Deviation> witness;
};

// True iff no stage/observation has an action beating the incumbent by more
// than `tolerance` under the policy's own Qbar.
inline LocalOptimality is_locally_optimal(const PomdpModel& model, const DeterministicPolicy& policy,
                                          double tolerance = 1e-12) {
  const EvaluationCache cache = full_evaluate(model, policy);
  for (std::size_t t = 0; t < model.horizon(); ++t) {
    const Matrix qbar = cached_obs_action_values(cache, t);
    for (std::size_t o = 0; o < model.num_observations(); ++o) {
      const std::size_t incumbent = policy.action(t, o);
      for (std::size_t a = 0; a < model.num_actions(); ++a) {
        const double gain = qbar(o, a) - qbar(o, incumbent);
        if (gain > tolerance) return {false, Deviation{t, o, a, gain}};
      }
    }
  }
  return {};
}

}  // namespace mempi
