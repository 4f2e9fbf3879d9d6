#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mempi/random.hpp"

namespace mempi {

inline constexpr double kStochasticTolerance = 1e-12;

struct Sizes {
  std::size_t states = 0;
  std::size_t actions = 0;
  std::size_t observations = 0;
  std::size_t horizon = 0;

  bool operator==(const Sizes&) const = default;

  void require_positive() const {
    if (states == 0 || actions == 0 || observations == 0 || horizon == 0) {
      std::ostringstream os;
      os << "all POMDP dimensions must be positive, got (S,A,O,T) = (" << states << ','
         << actions << ',' << observations << ',' << horizon << ')';
      throw std::invalid_argument(os.str());
    }
  }
};

// Finite-horizon tabular POMDP.
//
//   transition  p_t(s'|s,a)  for t in [0, T)
//   observation q_t(o|s)     for t in [0, T]
//   reward      r_t(s,a)     for t in [0, T)
//
// A time-invariant model stores a single slice of each tensor and serves it
// for every stage; all consumers go through the same accessors.
class PomdpModel {
 public:
  PomdpModel() = default;
  PomdpModel(Sizes sizes, bool time_invariant)
      : sizes_(sizes), time_invariant_(time_invariant) {
    sizes_.require_positive();
    const std::size_t S = sizes_.states, A = sizes_.actions, O = sizes_.observations;
    transition_.assign(transition_slices() * S * A * S, 0.0);
    observation_.assign(observation_slices() * S * O, 0.0);
    reward_.assign(transition_slices() * S * A, 0.0);
    initial_.assign(S, 0.0);
    terminal_.assign(S, 0.0);
  }

  const Sizes& sizes() const noexcept { return sizes_; }
  std::size_t num_states() const noexcept { return sizes_.states; }
  std::size_t num_actions() const noexcept { return sizes_.actions; }
  std::size_t num_observations() const noexcept { return sizes_.observations; }
  std::size_t horizon() const noexcept { return sizes_.horizon; }
  bool time_invariant() const noexcept { return time_invariant_; }

  // Number of distinct stored slices (1 when time-invariant).
  std::size_t transition_slices() const noexcept { return time_invariant_ ? 1 : sizes_.horizon; }
  std::size_t observation_slices() const noexcept {
    return time_invariant_ ? 1 : sizes_.horizon + 1;
  }

  std::span<const double> transition_row(std::size_t t, std::size_t s, std::size_t a) const {
    return {transition_.data() + transition_offset(t, s, a), sizes_.states};
  }
  std::span<double> transition_row(std::size_t t, std::size_t s, std::size_t a) {
    return {transition_.data() + transition_offset(t, s, a), sizes_.states};
  }
  double transition(std::size_t t, std::size_t s, std::size_t a, std::size_t next) const {
    return transition_[transition_offset(t, s, a) + next];
  }

  std::span<const double> observation_row(std::size_t t, std::size_t s) const {
    return {observation_.data() + observation_offset(t, s), sizes_.observations};
  }
  std::span<double> observation_row(std::size_t t, std::size_t s) {
    return {observation_.data() + observation_offset(t, s), sizes_.observations};
  }
  double observation(std::size_t t, std::size_t s, std::size_t o) const {
    return observation_[observation_offset(t, s) + o];
  }

  // r_t(s, .) over actions.
  std::span<const double> reward_row(std::size_t t, std::size_t s) const {
    return {reward_.data() + reward_offset(t, s), sizes_.actions};
  }
  std::span<double> reward_row(std::size_t t, std::size_t s) {
    return {reward_.data() + reward_offset(t, s), sizes_.actions};
  }
  double reward(std::size_t t, std::size_t s, std::size_t a) const {
    return reward_[reward_offset(t, s) + a];
  }

  std::span<const double> initial() const noexcept { return initial_; }
  std::span<double> initial() noexcept { return initial_; }
  std::span<const double> terminal() const noexcept { return terminal_; }
  std::span<double> terminal() noexcept { return terminal_; }

  bool operator==(const PomdpModel&) const = default;

 private:
  std::size_t transition_offset(std::size_t t, std::size_t s, std::size_t a) const {
    const std::size_t slice = time_invariant_ ? 0 : t;
    return ((slice * sizes_.states + s) * sizes_.actions + a) * sizes_.states;
  }
  std::size_t observation_offset(std::size_t t, std::size_t s) const {
    const std::size_t slice = time_invariant_ ? 0 : t;
    return (slice * sizes_.states + s) * sizes_.observations;
  }
  std::size_t reward_offset(std::size_t t, std::size_t s) const {
    const std::size_t slice = time_invariant_ ? 0 : t;
    return (slice * sizes_.states + s) * sizes_.actions;
  }

  Sizes sizes_{};
  bool time_invariant_ = false;
  std::vector<double> transition_;
  std::vector<double> observation_;
  std::vector<double> reward_;
  std::vector<double> initial_;
  std::vector<double> terminal_;
};

// Deterministic observation-based policy: actions[t][o] for t in [0, T).
class DeterministicPolicy {
 public:
  DeterministicPolicy() = default;
  DeterministicPolicy(std::size_t horizon, std::size_t observations, std::size_t actions)
      : horizon_(horizon), observations_(observations), actions_(actions),
        table_(horizon * observations, 0) {
    if (actions == 0) throw std::invalid_argument("policy needs at least one action");
  }
  explicit DeterministicPolicy(const Sizes& sizes)
      : DeterministicPolicy(sizes.horizon, sizes.observations, sizes.actions) {}

  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t num_observations() const noexcept { return observations_; }
  std::size_t num_actions() const noexcept { return actions_; }

  std::size_t action(std::size_t t, std::size_t o) const { return table_[t * observations_ + o]; }

  void set(std::size_t t, std::size_t o, std::size_t a) {
    check_index(t, o);
    if (a >= actions_) {
      throw std::out_of_range("action " + std::to_string(a) + " out of range");
    }
    table_[t * observations_ + o] = a;
  }

  std::span<const std::size_t> stage(std::size_t t) const {
    return {table_.data() + t * observations_, observations_};
  }
  std::span<std::size_t> stage(std::size_t t) {
    return {table_.data() + t * observations_, observations_};
  }

  void check_index(std::size_t t, std::size_t o) const {
    if (t >= horizon_ || o >= observations_) {
      std::ostringstream os;
      os << "policy index (t=" << t << ", o=" << o << ") out of range for T=" << horizon_
         << ", O=" << observations_;
      throw std::out_of_range(os.str());
    }
  }

  bool operator==(const DeterministicPolicy&) const = default;

 private:
  std::size_t horizon_ = 0;
  std::size_t observations_ = 0;
  std::size_t actions_ = 0;
  std::vector<std::size_t> table_;
};

// pi_t(a|o) = 1{a = pi_t(o)}.
inline std::vector<double> degenerate_dist(const DeterministicPolicy& policy, std::size_t t,
                                           std::size_t o) {
  policy.check_index(t, o);
  std::vector<double> dist(policy.num_actions(), 0.0);
  dist[policy.action(t, o)] = 1.0;
  return dist;
}

// Tabular stochastic observation-based policy pi_t(a|o).
class StochasticPolicy {
 public:
  StochasticPolicy() = default;
  StochasticPolicy(std::size_t horizon, std::size_t observations, std::size_t actions)
      : horizon_(horizon), observations_(observations), actions_(actions),
        probs_(horizon * observations * actions, 1.0 / static_cast<double>(actions)) {}
  explicit StochasticPolicy(const Sizes& sizes)
      : StochasticPolicy(sizes.horizon, sizes.observations, sizes.actions) {}

  static StochasticPolicy from(const DeterministicPolicy& policy) {
    StochasticPolicy out(policy.horizon(), policy.num_observations(), policy.num_actions());
    for (std::size_t t = 0; t < policy.horizon(); ++t) {
      for (std::size_t o = 0; o < policy.num_observations(); ++o) {
        auto row = out.distribution(t, o);
        std::fill(row.begin(), row.end(), 0.0);
        row[policy.action(t, o)] = 1.0;
      }
    }
    return out;
  }

  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t num_observations() const noexcept { return observations_; }
  std::size_t num_actions() const noexcept { return actions_; }

  std::span<const double> distribution(std::size_t t, std::size_t o) const {
    return {probs_.data() + (t * observations_ + o) * actions_, actions_};
  }
  std::span<double> distribution(std::size_t t, std::size_t o) {
    return {probs_.data() + (t * observations_ + o) * actions_, actions_};
  }

 private:
  std::size_t horizon_ = 0;
  std::size_t observations_ = 0;
  std::size_t actions_ = 0;
  std::vector<double> probs_;
};

// Softmax policy pi_t(a|o, theta) = exp(theta[t][o][a]) / sum_b exp(theta[t][o][b]).
class SoftmaxPolicy {
 public:
  SoftmaxPolicy() = default;
  SoftmaxPolicy(std::size_t horizon, std::size_t observations, std::size_t actions)
      : horizon_(horizon), observations_(observations), actions_(actions),
        theta_(horizon * observations * actions, 0.0) {}
  explicit SoftmaxPolicy(const Sizes& sizes)
      : SoftmaxPolicy(sizes.horizon, sizes.observations, sizes.actions) {}

  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t num_observations() const noexcept { return observations_; }
  std::size_t num_actions() const noexcept { return actions_; }

  std::span<const double> logits(std::size_t t, std::size_t o) const {
    return {theta_.data() + (t * observations_ + o) * actions_, actions_};
  }
  std::span<double> logits(std::size_t t, std::size_t o) {
    return {theta_.data() + (t * observations_ + o) * actions_, actions_};
  }
  std::span<const double> parameters() const noexcept { return theta_; }
  std::span<double> parameters() noexcept { return theta_; }

  // Max-subtracted so that large logits do not overflow.
  void probabilities(std::size_t t, std::size_t o, std::span<double> out) const {
    const auto z = logits(t, o);
    const double peak = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (std::size_t a = 0; a < actions_; ++a) {
      out[a] = std::exp(z[a] - peak);
      total += out[a];
    }
    for (std::size_t a = 0; a < actions_; ++a) out[a] /= total;
  }

  std::vector<double> probabilities(std::size_t t, std::size_t o) const {
    std::vector<double> out(actions_);
    probabilities(t, o, out);
    return out;
  }

  StochasticPolicy to_stochastic() const {
    StochasticPolicy out(horizon_, observations_, actions_);
    for (std::size_t t = 0; t < horizon_; ++t)
      for (std::size_t o = 0; o < observations_; ++o) probabilities(t, o, out.distribution(t, o));
    return out;
  }

 private:
  std::size_t horizon_ = 0;
  std::size_t observations_ = 0;
  std::size_t actions_ = 0;
  std::vector<double> theta_;
};

// ---------------------------------------------------------------------------
// Validation

enum class ViolationKind {
  kNegativeTransition,
  kTransitionRowSum,
  kNegativeObservation,
  kObservationRowSum,
  kNegativeInitial,
  kInitialSum,
  kNonFiniteValue,
};

struct Violation {
  ViolationKind kind;
  std::size_t t = 0;
  std::size_t s = 0;
  std::size_t a = 0;
  std::size_t o = 0;
  double value = 0.0;

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    switch (kind) {
      case ViolationKind::kNegativeTransition:
        os << "negative transition p_" << t << "(" << o << "|" << s << "," << a << ") = " << value;
        break;
      case ViolationKind::kTransitionRowSum:
        os << "transition row (t=" << t << ", s=" << s << ", a=" << a << ") sums to " << value;
        break;
      case ViolationKind::kNegativeObservation:
        os << "negative observation q_" << t << "(" << o << "|" << s << ") = " << value;
        break;
      case ViolationKind::kObservationRowSum:
        os << "observation row (t=" << t << ", s=" << s << ") sums to " << value;
        break;
      case ViolationKind::kNegativeInitial:
        os << "negative initial probability mu_0(" << s << ") = " << value;
        break;
      case ViolationKind::kInitialSum:
        os << "initial distribution sums to " << value;
        break;
      case ViolationKind::kNonFiniteValue:
        os << "non-finite entry at (t=" << t << ", s=" << s << ", a=" << a << ")";
        break;
    }
    return os.str();
  }
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const noexcept { return violations.empty(); }

  std::string describe() const {
    std::string out;
    for (const auto& v : violations) {
      if (!out.empty()) out += "; ";
      out += v.describe();
    }
    return out;
  }
};

namespace detail {

inline void check_row(std::span<const double> row, ViolationKind negative, ViolationKind sum,
                      Violation where, ValidationReport& report) {
  double total = 0.0;
  bool finite = true;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (!std::isfinite(row[i])) finite = false;
    if (row[i] < 0.0) {
      Violation v = where;
      v.kind = negative;
      v.o = i;
      v.value = row[i];
      report.violations.push_back(v);
    }
    total += row[i];
  }
  if (!finite || std::abs(total - 1.0) > kStochasticTolerance) {
    Violation v = where;
    v.kind = sum;
    v.value = total;
    report.violations.push_back(v);
  }
}

}  // namespace detail

// Lists every violated stochasticity invariant. Rewards and terminal values
// may be any finite real.
inline ValidationReport validate_model(const PomdpModel& model) {
  ValidationReport report;
  const std::size_t S = model.num_states(), A = model.num_actions();
  for (std::size_t t = 0; t < model.transition_slices(); ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t a = 0; a < A; ++a) {
        detail::check_row(model.transition_row(t, s, a), ViolationKind::kNegativeTransition,
                          ViolationKind::kTransitionRowSum,
                          Violation{ViolationKind::kTransitionRowSum, t, s, a, 0, 0.0}, report);
        if (!std::isfinite(model.reward(t, s, a))) {
          report.violations.push_back(Violation{ViolationKind::kNonFiniteValue, t, s, a, 0, 0.0});
        }
      }
    }
  }
  for (std::size_t t = 0; t < model.observation_slices(); ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      detail::check_row(model.observation_row(t, s), ViolationKind::kNegativeObservation,
                        ViolationKind::kObservationRowSum,
                        Violation{ViolationKind::kObservationRowSum, t, s, 0, 0, 0.0}, report);
    }
  }
  double total = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    const double p = model.initial()[s];
    if (p < 0.0) report.violations.push_back(Violation{ViolationKind::kNegativeInitial, 0, s, 0, 0, p});
    total += p;
  }
  if (!std::isfinite(total) || std::abs(total - 1.0) > kStochasticTolerance) {
    report.violations.push_back(Violation{ViolationKind::kInitialSum, 0, 0, 0, 0, total});
  }
  for (std::size_t s = 0; s < S; ++s) {
    if (!std::isfinite(model.terminal()[s])) {
      report.violations.push_back(
          Violation{ViolationKind::kNonFiniteValue, model.horizon(), s, 0, 0, 0.0});
    }
  }
  return report;
}

inline void require_valid(const PomdpModel& model) {
  const auto report = validate_model(model);
  if (!report.ok()) throw std::invalid_argument("invalid POMDP model: " + report.describe());
}

// ---------------------------------------------------------------------------
// Random instances

namespace detail {

inline void fill_uniform_row(std::span<double> row, Rng& rng) {
  double total = 0.0;
  for (auto& x : row) {
    x = rng.uniform();
    total += x;
  }
  // A zero total needs every draw to be exactly 0; fall back to uniform.
  if (total <= 0.0) {
    std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(row.size()));
    return;
  }
  for (auto& x : row) x /= total;
}

}  // namespace detail

struct RandomModelOptions {
  bool time_invariant = false;
  double reward_lo = 0.0;
  double reward_hi = 1.0;
  // Terminal values are drawn uniformly on [terminal_lo, terminal_hi]; both
  // zero gives V_T = 0.
  double terminal_lo = 0.0;
  double terminal_hi = 0.0;
};

// Every probability row is a normalized vector of i.i.d. uniform(0,1) draws,
// rewards are i.i.d. uniform on [reward_lo, reward_hi].
inline PomdpModel random_pomdp(const Sizes& sizes, std::uint64_t seed,
                               const RandomModelOptions& options = {}) {
  PomdpModel model(sizes, options.time_invariant);
  Rng rng(seed);
  const std::size_t S = sizes.states, A = sizes.actions;
  for (std::size_t t = 0; t < model.transition_slices(); ++t)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < A; ++a) detail::fill_uniform_row(model.transition_row(t, s, a), rng);
  for (std::size_t t = 0; t < model.observation_slices(); ++t)
    for (std::size_t s = 0; s < S; ++s) detail::fill_uniform_row(model.observation_row(t, s), rng);
  for (std::size_t t = 0; t < model.transition_slices(); ++t)
    for (std::size_t s = 0; s < S; ++s)
      for (auto& r : model.reward_row(t, s)) r = rng.uniform(options.reward_lo, options.reward_hi);
  detail::fill_uniform_row(model.initial(), rng);
  if (options.terminal_hi != 0.0 || options.terminal_lo != 0.0) {
    for (auto& v : model.terminal()) v = rng.uniform(options.terminal_lo, options.terminal_hi);
  }
  return model;
}

inline PomdpModel random_pomdp(const Sizes& sizes, std::uint64_t seed, bool time_invariant) {
  RandomModelOptions options;
  options.time_invariant = time_invariant;
  return random_pomdp(sizes, seed, options);
}

inline DeterministicPolicy random_policy(const Sizes& sizes, std::uint64_t seed) {
  DeterministicPolicy policy(sizes);
  Rng rng(seed);
  for (std::size_t t = 0; t < sizes.horizon; ++t)
    for (std::size_t o = 0; o < sizes.observations; ++o) policy.set(t, o, rng.below(sizes.actions));
  return policy;
}

template <class Policy>
void require_compatible(const PomdpModel& model, const Policy& policy) {
  if (policy.horizon() != model.horizon() || policy.num_observations() != model.num_observations() ||
      policy.num_actions() != model.num_actions()) {
    std::ostringstream os;
    os << "policy shape (T=" << policy.horizon() << ", O=" << policy.num_observations()
       << ", A=" << policy.num_actions() << ") does not match model (T=" << model.horizon()
       << ", O=" << model.num_observations() << ", A=" << model.num_actions() << ")";
    throw std::invalid_argument(os.str());
  }
}

}  // namespace mempi
