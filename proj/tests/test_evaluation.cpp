#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mempi/mempi.hpp"
#include "oracles.hpp"

using namespace mempi;

namespace {

// Model with p(s'|s,a) = 1{s' = s} and q(o|s) = 1{o = s}.
PomdpModel identity_chain(std::size_t S, std::size_t A, std::size_t T) {
  PomdpModel m({S, A, S, T}, false);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < A; ++a) m.transition_row(t, s, a)[s] = 1.0;
  for (std::size_t t = 0; t <= T; ++t)
    for (std::size_t s = 0; s < S; ++s) m.observation_row(t, s)[s] = 1.0;
  for (std::size_t s = 0; s < S; ++s) m.initial()[s] = 1.0 / static_cast<double>(S);
  return m;
}

// Two states, one action, two observations, T = 1; q_0(0|0) = 0.8, q_0(0|1) = 0.4.
PomdpModel bayes_example() {
  PomdpModel m({2, 1, 2, 1}, false);
  m.observation_row(0, 0)[0] = 0.8;
  m.observation_row(0, 0)[1] = 0.2;
  m.observation_row(0, 1)[0] = 0.4;
  m.observation_row(0, 1)[1] = 0.6;
  for (std::size_t s = 0; s < 2; ++s) {
    m.observation_row(1, s)[0] = 1.0;
    m.transition_row(0, s, 0)[s] = 1.0;
  }
  m.initial()[0] = 0.5;
  m.initial()[1] = 0.5;
  return m;
}

double total(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST(QBackwardStep, LastStageWithZeroTerminalIsReward) {
  const PomdpModel m = random_pomdp({3, 2, 2, 4}, 1, RandomModelOptions{});
  const DeterministicPolicy p = random_policy(m.sizes(), 2);
  const Matrix q = q_backward_step(m, p, 3, Matrix{});
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t a = 0; a < 2; ++a) EXPECT_EQ(q(s, a), m.reward(3, s, a));
}

TEST(QBackwardStep, IdentityChainCarriesTerminalValue) {
  PomdpModel m = identity_chain(3, 2, 2);
  for (std::size_t s = 0; s < 3; ++s) m.terminal()[s] = 1.0 + static_cast<double>(s);
  const DeterministicPolicy p(m.sizes());
  const Matrix q1 = q_backward_step(m, p, 1, Matrix{});
  const Matrix q0 = q_backward_step(m, p, 0, q1);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t a = 0; a < 2; ++a) EXPECT_DOUBLE_EQ(q0(s, a), m.terminal()[s]);
}

TEST(QBackwardStep, MatchesOutcomeEnumeration) {
  RandomModelOptions opts;
  opts.terminal_hi = 1.0;
  const PomdpModel m = random_pomdp({2, 2, 2, 2}, 17, opts);
  const DeterministicPolicy p = random_policy(m.sizes(), 3);
  const Matrix q1 = q_backward_step(m, p, 1, Matrix{});
  const Matrix q0 = q_backward_step(m, p, 0, q1);
  // Enumerate (s1, o1, s2) outcomes from each (s0, a0).
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t a = 0; a < 2; ++a) {
      double expected = m.reward(0, s, a);
      for (std::size_t s1 = 0; s1 < 2; ++s1)
        for (std::size_t o1 = 0; o1 < 2; ++o1) {
          const std::size_t a1 = p.action(1, o1);
          for (std::size_t s2 = 0; s2 < 2; ++s2) {
            const double prob = m.transition(0, s, a, s1) * m.observation(1, s1, o1) * m.transition(1, s1, a1, s2);
            expected += prob * (m.reward(1, s1, a1) + m.terminal()[s2]);
          }
        }
      EXPECT_NEAR(q0(s, a), expected, 1e-14);
    }
}

TEST(MuForwardStep, IdentityTransitionsPreserveMu) {
  const PomdpModel m = identity_chain(4, 2, 3);
  const std::vector<double> mu{0.1, 0.2, 0.3, 0.4};
  const auto next = mu_forward_step(m, random_policy(m.sizes(), 1), 1, mu);
  for (std::size_t s = 0; s < 4; ++s) EXPECT_DOUBLE_EQ(next[s], mu[s]);
}

TEST(MuForwardStep, AbsorbingStateCollectsAllMass) {
  PomdpModel m({2, 1, 1, 1}, false);
  for (std::size_t s = 0; s < 2; ++s) {
    m.transition_row(0, s, 0)[0] = 1.0;
    m.observation_row(0, s)[0] = 1.0;
    m.observation_row(1, s)[0] = 1.0;
  }
  m.initial()[0] = m.initial()[1] = 0.5;
  const auto next = mu_forward_step(m, DeterministicPolicy(m.sizes()), 0, std::vector<double>{0.5, 0.5});
  EXPECT_EQ(next, (std::vector<double>{1.0, 0.0}));
}

TEST(MuForwardStep, MatchesSimulatedStateFrequencies) {
  const PomdpModel m = random_pomdp({3, 2, 2, 2}, 8, RandomModelOptions{});
  const DeterministicPolicy p = random_policy(m.sizes(), 4);
  const auto mu1 = mu_forward_step(m, p, 0, std::vector<double>(m.initial().begin(), m.initial().end()));
  const std::size_t n = 1000000;
  std::vector<double> freq(3, 0.0);
  Rng rng(99);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = rng.categorical(m.initial());
    const std::size_t o = rng.categorical(m.observation_row(0, s));
    freq[rng.categorical(m.transition_row(0, s, p.action(0, o)))] += 1.0;
  }
  for (std::size_t s = 0; s < 3; ++s) {
    const double f = freq[s] / static_cast<double>(n);
    const double sigma = std::sqrt(mu1[s] * (1.0 - mu1[s]) / static_cast<double>(n));
    EXPECT_LT(std::abs(f - mu1[s]), 3.0 * sigma);
  }
}

TEST(Posterior, PerfectObservationIsIdentity) {
  const PomdpModel m = identity_chain(3, 1, 2);
  const Posterior post = posterior(m, 1, std::vector<double>{0.2, 0.5, 0.3});
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(post.alpha(o, s), o == s ? 1.0 : 0.0);
}

TEST(Posterior, FlatLikelihoodReturnsPrior) {
  PomdpModel m({3, 1, 2, 1}, false);
  for (std::size_t t = 0; t <= 1; ++t)
    for (std::size_t s = 0; s < 3; ++s) m.observation_row(t, s)[0] = m.observation_row(t, s)[1] = 0.5;
  const std::vector<double> mu{0.2, 0.3, 0.5};
  const Posterior post = posterior(m, 0, mu);
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t s = 0; s < 3; ++s) EXPECT_NEAR(post.alpha(o, s), mu[s], 1e-15);
}

TEST(Posterior, HandBayesExample) {
  const PomdpModel m = bayes_example();
  const Posterior post = posterior(m, 0, std::vector<double>{0.5, 0.5});
  EXPECT_NEAR(post.gamma[0], 0.6, 1e-15);
  EXPECT_NEAR(post.gamma[1], 0.4, 1e-15);
  EXPECT_NEAR(post.alpha(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(post.alpha(0, 1), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(post.alpha(1, 0), 0.25, 1e-15);
}

TEST(Posterior, UnreachableObservationGetsUniformRow) {
  PomdpModel m = identity_chain(2, 1, 1);
  const Posterior post = posterior(m, 0, std::vector<double>{1.0, 0.0});
  EXPECT_EQ(post.gamma[1], 0.0);
  EXPECT_DOUBLE_EQ(post.alpha(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(post.alpha(1, 1), 0.5);
}

TEST(ObsActionValues, IdentityPosteriorReturnsQ) {
  Matrix q(3, 2);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t a = 0; a < 2; ++a) q(s, a) = 10.0 * static_cast<double>(s) + static_cast<double>(a);
  Matrix alpha(3, 3);
  for (std::size_t i = 0; i < 3; ++i) alpha(i, i) = 1.0;
  EXPECT_TRUE(obs_action_values(q, alpha) == q);
}

TEST(ObsActionValues, ConstantQIsConstant) {
  Matrix q(4, 3, 2.5);
  Matrix alpha(2, 4, 0.25);
  const Matrix qbar = obs_action_values(q, alpha);
  for (double x : qbar.values()) EXPECT_DOUBLE_EQ(x, 2.5);
}

TEST(ObsActionValues, HandDotProduct) {
  const PomdpModel m = bayes_example();
  const Posterior post = posterior(m, 0, std::vector<double>{0.5, 0.5});
  Matrix q(2, 1);
  q(0, 0) = 1.0;
  q(1, 0) = 3.0;
  EXPECT_NEAR(obs_action_values(q, post.alpha)(0, 0), 5.0 / 3.0, 1e-15);
}

TEST(ObsActionValues, MatchesHistoryEnumeration) {
  const PomdpModel m = random_pomdp({3, 2, 2, 3}, 21, RandomModelOptions{});
  const DeterministicPolicy p = random_policy(m.sizes(), 6);
  const EvaluationCache cache = full_evaluate(m, p);
  for (std::size_t t = 0; t < 3; ++t) {
    const Matrix qbar = cached_obs_action_values(cache, t);
    for (std::size_t o = 0; o < 2; ++o)
      for (std::size_t a = 0; a < 2; ++a) {
        // Qbar_t(o,a) is the reward-to-go from t; the oracle measures the same.
        EXPECT_NEAR(qbar(o, a), oracle::brute_force_obs_action_value(m, p, t, o, a), 1e-12);
      }
  }
}

TEST(EpisodicReturn, ZeroRewardsGiveZero) {
  RandomModelOptions opts;
  opts.reward_hi = 0.0;
  const PomdpModel m = random_pomdp({3, 2, 2, 4}, 5, opts);
  EXPECT_EQ(episodic_return(m, random_policy(m.sizes(), 1)), 0.0);
}

TEST(EpisodicReturn, SingleStageExpansion) {
  RandomModelOptions opts;
  opts.terminal_hi = 2.0;
  const PomdpModel m = random_pomdp({3, 2, 3, 1}, 6, opts);
  const DeterministicPolicy p = random_policy(m.sizes(), 2);
  double expected = 0.0;
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t o = 0; o < 3; ++o) {
      const std::size_t a = p.action(0, o);
      double inner = m.reward(0, s, a);
      for (std::size_t n = 0; n < 3; ++n) inner += m.transition(0, s, a, n) * m.terminal()[n];
      expected += m.initial()[s] * m.observation(0, s, o) * inner;
    }
  EXPECT_NEAR(episodic_return(m, p), expected, 1e-14);
}

TEST(EpisodicReturn, MatchesBruteForceEnumeration) {
  RandomModelOptions opts;
  opts.terminal_hi = 1.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PomdpModel m = random_pomdp({3, 2, 2, 4}, seed, opts);
    const DeterministicPolicy p = random_policy(m.sizes(), seed + 100);
    EXPECT_NEAR(episodic_return(m, p), oracle::brute_force_return(m, p), 1e-12);
    StochasticPolicy sp(m.sizes());
    EXPECT_NEAR(episodic_return(m, sp), oracle::brute_force_return(m, sp), 1e-12);
  }
}

TEST(EpisodicReturn, MatchesMonteCarlo) {
  const PomdpModel m = random_pomdp({4, 2, 3, 5}, 31, RandomModelOptions{});
  const DeterministicPolicy p = random_policy(m.sizes(), 7);
  const auto mc = oracle::monte_carlo_return(m, OnPolicy{&p}, 1000000, 2024);
  EXPECT_LT(std::abs(mc.mean - episodic_return(m, p)), 3.0 * mc.stderr_);
}

TEST(UnrolledReturn, EveryStageReproducesTheReturn) {
  const PomdpModel m = random_pomdp({5, 3, 3, 6}, 9, RandomModelOptions{});
  const DeterministicPolicy p = random_policy(m.sizes(), 10);
  const EvaluationCache cache = full_evaluate(m, p);
  const double L = episodic_return(m, p);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(unrolled_return(m, p, k, cache), L, 1e-10);
}

TEST(UnrolledReturn, ZeroRewardPartialSums) {
  RandomModelOptions opts;
  opts.reward_hi = 0.0;
  opts.terminal_lo = 1.0;
  opts.terminal_hi = 2.0;
  const PomdpModel m = random_pomdp({3, 2, 2, 4}, 2, opts);
  const DeterministicPolicy p = random_policy(m.sizes(), 3);
  const EvaluationCache cache = full_evaluate(m, p);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(stage_expected_reward(m, p, k, cache.mu[k]), 0.0);
    EXPECT_NEAR(unrolled_return(m, p, k, cache), episodic_return(m, p), 1e-12);
  }
}

TEST(FullEvaluate, CountersAndInvariants) {
  const PomdpModel m = random_pomdp({4, 3, 3, 7}, 4, RandomModelOptions{});
  const DeterministicPolicy p = random_policy(m.sizes(), 4);
  const EvaluationCache cache = full_evaluate(m, p);
  EXPECT_EQ(cache.mu_update_count, 7u);
  EXPECT_EQ(cache.q_update_count, 7u);
  for (std::size_t t = 0; t <= 7; ++t) EXPECT_NEAR(total(cache.mu[t]), 1.0, 1e-10);
  for (std::size_t t = 0; t < 7; ++t) {
    for (std::size_t o = 0; o < 3; ++o) {
      double g = 0.0;
      for (std::size_t s = 0; s < 4; ++s) g += m.observation(t, s, o) * cache.mu[t][s];
      EXPECT_NEAR(cache.gamma[t][o], g, 1e-12);
      if (cache.gamma[t][o] > 0.0) {
        EXPECT_NEAR(total(cache.alpha[t].row(o)), 1.0, 1e-10);
      }
    }
    EXPECT_TRUE(cache.ready(t));
  }
  const auto brute = oracle::brute_force_state_marginal(m, p, 3);
  for (std::size_t s = 0; s < 4; ++s) EXPECT_NEAR(cache.mu[3][s], brute[s], 1e-12);
  EXPECT_NEAR(dot(m.initial(), stage_value(m, p, 0, cache.q_sa[0])), episodic_return(m, p), 1e-15);
}

TEST(EvaluationCache, InvalidationAndLazyRefresh) {
  const PomdpModel m = random_pomdp({3, 2, 2, 6}, 4, RandomModelOptions{});
  DeterministicPolicy p = random_policy(m.sizes(), 4);
  EvaluationCache cache = full_evaluate(m, p);
  invalidate_stage(cache, 2);
  EXPECT_TRUE(cache.mu_valid[2]);
  EXPECT_FALSE(cache.mu_valid[3]);
  EXPECT_FALSE(cache.q_valid[1]);
  EXPECT_TRUE(cache.q_valid[2]);
  EXPECT_THROW(cached_obs_action_values(cache, 4), std::logic_error);
  EXPECT_EQ(refresh_mu(cache, m, p, 5), 3u);
  EXPECT_EQ(refresh_q(cache, m, p, 0), 2u);
  EXPECT_EQ(refresh_mu(cache, m, p, 5), 0u);
  EXPECT_EQ(cache.mu_update_count, 9u);
  EXPECT_EQ(cache.q_update_count, 8u);
}

TEST(EvaluationCache, StaleStageIsRecomputedAfterPolicyChange) {
  const PomdpModel m = random_pomdp({4, 3, 2, 5}, 14, RandomModelOptions{});
  DeterministicPolicy p = random_policy(m.sizes(), 1);
  EvaluationCache cache = full_evaluate(m, p);
  p.set(2, 1, (p.action(2, 1) + 1) % 3);
  invalidate_stage(cache, 2);
  refresh_mu(cache, m, p, 5);
  refresh_q(cache, m, p, 0);
  const EvaluationCache fresh = full_evaluate(m, p);
  for (std::size_t t = 0; t < 5; ++t) {
    EXPECT_TRUE(cache.q_sa[t] == fresh.q_sa[t]);
    EXPECT_EQ(cache.mu[t], fresh.mu[t]);
  }
}

TEST(LocalOptimality, SingleActionIsAlwaysOptimal) {
  const PomdpModel m = random_pomdp({3, 1, 2, 4}, 3, RandomModelOptions{});
  EXPECT_TRUE(is_locally_optimal(m, DeterministicPolicy(m.sizes())).optimal);
}

TEST(LocalOptimality, GlobalOptimumIsLocallyOptimal) {
  const PomdpModel m = random_pomdp({3, 2, 2, 3}, 12, RandomModelOptions{});
  const ExhaustiveResult best = exhaustive_search(m);
  EXPECT_TRUE(is_locally_optimal(m, best.policy).optimal);
}

TEST(LocalOptimality, WitnessIsAnImprovingDeviation) {
  const PomdpModel m = random_pomdp({4, 3, 3, 4}, 13, RandomModelOptions{});
  DeterministicPolicy p(m.sizes());
  const LocalOptimality lo = is_locally_optimal(m, p);
  ASSERT_FALSE(lo.optimal);
  ASSERT_TRUE(lo.witness.has_value());
  const double before = episodic_return(m, p);
  p.set(lo.witness->t, lo.witness->o, lo.witness->action);
  EXPECT_GT(episodic_return(m, p), before);
}

TEST(Evaluation, StageOutOfRangeThrows) {
  const PomdpModel m = random_pomdp({2, 2, 2, 3}, 1, RandomModelOptions{});
  const DeterministicPolicy p(m.sizes());
  EXPECT_THROW(q_backward_step(m, p, 3, Matrix{}), std::out_of_range);
  EXPECT_THROW(mu_forward_step(m, p, 3, std::vector<double>{0.5, 0.5}), std::out_of_range);
  const EvaluationCache cache = full_evaluate(m, p);
  EXPECT_THROW(unrolled_return(m, p, 3, cache), std::out_of_range);
}
