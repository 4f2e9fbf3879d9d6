// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mempi/mempi.hpp"
#include "oracles.hpp"

using namespace mempi;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failure reasons; the first few are kept for the report.
struct Checker {
  std::size_t failures = 0;
  std::vector<std::string> first;
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures;
    if (first.size() < 3) first.push_back(what);
  }
  std::string why() const {
    std::string s;
    for (const auto& f : first) s += (s.empty() ? "" : "; ") + f;
    return s;
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Sizes random_sizes(Rng& rng, std::size_t s_lo, std::size_t s_hi, std::size_t a_lo, std::size_t a_hi,
                   std::size_t o_lo, std::size_t o_hi, std::size_t t_lo, std::size_t t_hi) {
  const auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); };
  const std::size_t S = pick(s_lo, s_hi), A = pick(a_lo, a_hi), O = pick(o_lo, o_hi), T = pick(t_lo, t_hi);
  return {S, A, O, T};
}

// 1. Monotone traces and locally optimal end points.
Outcome monotone_convergence() {
  Rng rng(1001);
  Checker c;
  std::size_t runs = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const Sizes sz = random_sizes(rng, 2, 8, 1, 3, 2, 4, 2, 6);
    const PomdpModel m = random_pomdp(sz, 5000 + i, RandomModelOptions{});
    const std::vector<UpdateSchedule> schedules{optimal_schedule(sz.horizon), forward_schedule(sz.horizon),
                                                backward_schedule(sz.horizon),
                                                random_schedule(sz.horizon, rng.below(6), rng)};
    for (const auto& sched : schedules) {
      const DeterministicPolicy p0 = random_policy(sz, rng.next());
      const SolveTrace trace = solve_generic(m, p0, sched);
      double prev = trace.initial_value;
      for (const auto& s : trace.steps) {
        c.expect(s.value >= prev - 1e-12, fmt("instance %zu schedule %s: L dropped at step %zu", i,
                                              sched.to_string().c_str(), s.index));
        prev = s.value;
      }
      c.expect(trace.termination == Termination::kConverged, fmt("instance %zu did not converge", i));
      c.expect(is_locally_optimal(m, trace.policy).optimal, fmt("instance %zu: final policy not locally optimal", i));
      ++runs;
    }
  }
  return {c.failures == 0, fmt("%zu runs, %zu violations", runs, c.failures) + (c.failures ? " (" + c.why() + ")" : "")};
}

// 2. Exhaustive optimum bounds PI; attainment rate reported.
Outcome global_dominance() {
  Rng rng(2002);
  Checker c;
  std::size_t attained = 0, done = 0;
  double worst_gap = 0.0;
  while (done < 20) {
    const Sizes sz = random_sizes(rng, 2, 6, 2, 3, 2, 3, 2, 5);
    if (policy_count(sz) > 65536.0) continue;
    const PomdpModel m = random_pomdp(sz, 7000 + done, RandomModelOptions{});
    const SolveTrace pi = solve_efficient(m, DeterministicPolicy(sz));
    const ExhaustiveResult best = exhaustive_search(m);
    c.expect(best.value >= pi.final_value - 1e-12, fmt("instance %zu: PI beats exhaustive", done));
    if (best.value - pi.final_value <= 1e-10) ++attained;
    worst_gap = std::max(worst_gap, best.value - pi.final_value);
    ++done;
  }
  return {c.failures == 0, fmt("20 instances, global optimum attained in %zu/20, largest gap %.3g", attained, worst_gap)};
}

// 3. Minimum cost over all schedules with period <= 8 is 1, reached only by unit-step cycles.
Outcome optimal_schedule_enumeration() {
  Checker c;
  std::string counts;
  for (std::size_t T = 2; T <= 4; ++T) {
    const auto all = enumerate_schedules(T, 8);
    double best = INFINITY;
    for (const auto& s : all) best = std::min(best, cost_index(s));
    c.expect(std::abs(best - 1.0) < 1e-15, fmt("T=%zu: minimum cost %.17g", T, best));
    std::size_t minimizers = 0;
    for (const auto& s : all) {
      if (std::abs(cost_index(s) - 1.0) > 1e-15) continue;
      ++minimizers;
      const auto& st = s.stages();
      for (std::size_t l = 0; l < st.size(); ++l) {
        const std::size_t a = st[l], b = st[(l + 1) % st.size()];
        c.expect((a > b ? a - b : b - a) == 1, fmt("T=%zu: minimizer %s has a jump", T, s.to_string().c_str()));
      }
      c.expect(s.period() >= 2 * (T - 1), fmt("T=%zu: minimizer shorter than 2(T-1)", T));
    }
    const UpdateSchedule opt = optimal_schedule(T);
    c.expect(cost_index(opt) == 1.0 && opt.period() == 2 * (T - 1), fmt("T=%zu: optimal_schedule wrong", T));
    counts += fmt("%sT=%zu: %zu schedules, %zu minimizers", counts.empty() ? "" : ", ", T, all.size(), minimizers);
  }
  return {c.failures == 0, counts + (c.failures ? " (" + c.why() + ")" : "")};
}

// 4. Per-period counters equal M*C; efficient solver pays one update per improvement.
Outcome operation_accounting() {
  Rng rng(4004);
  Checker c;
  std::size_t schedules_checked = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    const Sizes sz = random_sizes(rng, 2, 6, 2, 3, 2, 4, 2, 5);
    const PomdpModel m = random_pomdp(sz, 9000 + i, true);
    std::vector<std::pair<std::string, UpdateSchedule>> list;
    for (const auto& s : enumerate_schedules(sz.horizon, std::min<std::size_t>(8, 2 * sz.horizon))) {
      list.emplace_back(s.to_string(), s);
      if (list.size() >= 25) break;
    }
    for (int k = 0; k < 5; ++k) list.emplace_back("random", random_schedule(sz.horizon, rng.below(6), rng));
    try {
      for (const auto& row : compare_schedules(m, list)) {
        c.expect(row.counts_match, fmt("instance %zu schedule %s: counters off", i, row.schedule.to_string().c_str()));
        c.expect(std::abs(row.measured_cost - row.predicted_cost) < 1e-12, "measured cost differs");
        ++schedules_checked;
      }
    } catch (const std::logic_error& e) {
      c.expect(false, e.what());
    }
    const SolveTrace eff = solve_efficient(m, random_policy(sz, i));
    std::uint64_t mu = sz.horizon, q = sz.horizon;
    for (const auto& s : eff.steps) {
      c.expect((s.mu_updates - mu) + (s.q_updates - q) == 1, fmt("instance %zu: step %zu paid != 1", i, s.index));
      mu = s.mu_updates;
      q = s.q_updates;
    }
  }
  return {c.failures == 0, fmt("%zu (instance, schedule) pairs", schedules_checked) + (c.failures ? " (" + c.why() + ")" : "")};
}

// 5. Incrementally maintained Qbar equals a fresh evaluation at every step.
Outcome incremental_correctness() {
  Rng rng(5005);
  Checker c;
  std::size_t steps = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const Sizes sz = random_sizes(rng, 2, 8, 2, 4, 2, 5, 2, 7);
    const PomdpModel m = random_pomdp(sz, 11000 + i, RandomModelOptions{});
    SolveOptions opts;
    opts.observer = [&](const StepObservation& obs) {
      const Matrix fresh = cached_obs_action_values(full_evaluate(m, obs.policy), obs.stage);
      for (std::size_t k = 0; k < fresh.values().size(); ++k)
        worst = std::max(worst, std::abs(fresh.values()[k] - obs.obs_action_values.values()[k]));
      ++steps;
    };
    if (i % 2 == 0) {
      solve_efficient(m, random_policy(sz, i), opts);
    } else {
      solve_generic(m, random_policy(sz, i), random_schedule(sz.horizon, rng.below(5), rng), opts);
    }
  }
  c.expect(worst <= 1e-10, fmt("max deviation %.3g", worst));
  return {c.failures == 0, fmt("%zu steps over 20 runs, max |dQbar| = %.3g", steps, worst)};
}

// 6. Fully observable embeddings reach the MDP optimum.
Outcome mdp_degeneration() {
  Rng rng(6006);
  Checker c;
  double worst = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const std::size_t S = 2 + rng.below(7), A = 1 + rng.below(4), T = 1 + rng.below(8);
    const PomdpModel m = oracle::mdp_embedding(S, A, T, 13000 + i);
    const SolveTrace pi = solve_efficient(m, random_policy(m.sizes(), i));
    const double gap = std::abs(pi.final_value - oracle::backward_induction_optimum(m));
    worst = std::max(worst, gap);
    c.expect(gap <= 1e-10, fmt("embedding %zu: gap %.3g", i, gap));
  }
  return {c.failures == 0, fmt("20 embeddings, max |L - L_MDP*| = %.3g", worst)};
}

// 7. Analytic softmax gradient vs central differences of an independent return oracle.
Outcome gradient_correctness() {
  Rng rng(7007);
  Checker c;
  double worst = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    const Sizes sz = random_sizes(rng, 2, 4, 2, 3, 2, 3, 1, 3);
    const PomdpModel m = random_pomdp(sz, 15000 + i, RandomModelOptions{});
    SoftmaxPolicy p(sz);
    for (auto& th : p.parameters()) th = rng.uniform(-2.0, 2.0);
    const PgEvaluation ev = pg_return_and_gradient(m, p);
    const auto f = [&](const std::vector<double>& theta) {
      SoftmaxPolicy q(sz);
      std::copy(theta.begin(), theta.end(), q.parameters().begin());
      return oracle::brute_force_return(m, q.to_stochastic());
    };
    const auto fd = oracle::finite_difference(f, {p.parameters().begin(), p.parameters().end()}, 1e-5);
    double diff = 0.0, norm = 0.0;
    for (std::size_t k = 0; k < fd.size(); ++k) {
      diff += (ev.gradient[k] - fd[k]) * (ev.gradient[k] - fd[k]);
      norm += fd[k] * fd[k];
    }
    const double rel = std::sqrt(diff) / std::max(std::sqrt(norm), 1e-300);
    worst = std::max(worst, rel);
    c.expect(rel < 1e-6, fmt("pair %zu: relative error %.3g", i, rel));
  }
  return {c.failures == 0, fmt("10 pairs, max relative error %.3g", worst)};
}

// 8. PI needs fewer counted stage improvements than PG on mid-size instances.
Outcome pi_vs_pg() {
  const Sizes sz{40, 10, 20, 20};
  std::size_t ordered = 0, equal = 0;
  std::string sample;
  for (std::size_t i = 0; i < 10; ++i) {
    const SizeSweepRow row = sweep_size({sz}, 100 + i, GradientRunConfig{}).front();
    if (row.pg_reached && row.pi_improvements < row.pg_improvements) ++ordered;
    if (!row.pg_reached && row.pi_improvements < row.pg_improvements) ++ordered;  // PG never got there
    if (std::abs(row.pg_value - row.pi_value) <= 1e-3) ++equal;
    if (i == 0) sample = fmt("instance 0: PI %zu vs PG %zu", row.pi_improvements, row.pg_improvements);
  }
  return {ordered >= 9 && equal >= 6,
          fmt("PI fewer improvements in %zu/10, equal L within 1e-3 in %zu/10; ", ordered, equal) + sample};
}

// 9. Large instance solves to local optimality.
Outcome scale_smoke() {
  const Sizes sz{500, 100, 100, 50};
  const PomdpModel m = random_pomdp(sz, 1, true);
  const auto t0 = std::chrono::steady_clock::now();
  const SolveTrace trace = solve_efficient(m, DeterministicPolicy(sz));
  const double solve_s = seconds_since(t0);
  const bool local = is_locally_optimal(m, trace.policy).optimal;
  return {local && trace.termination == Termination::kConverged,
          fmt("(T,S,O=A)=(50,500,100) time-invariant, solve %.2f s, %zu improvements, L=%.6f, locally optimal=%s", solve_s,
              trace.steps.size(), trace.final_value, local ? "yes" : "no")};
}

// 10. Estimator errors shrink with the batch size.
Outcome model_free_consistency() {
  const PomdpModel m = random_pomdp({3, 2, 3, 4}, 42, RandomModelOptions{});
  const DeterministicPolicy p = random_policy(m.sizes(), 42);
  const std::vector<std::size_t> ns{1000, 10000, 100000};
  std::vector<double> med_q, med_Q, med_a, med_cell;
  for (std::size_t n : ns) {
    std::vector<double> eq, eQ, ea, ecell;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const EpisodeDataset data = collect_state_informed(m, p, 0.5, n, rep_seed(10, seed));
      const EstimatorErrors e = estimator_errors(m, data, p);
      eq.push_back(e.q_obs);
      eQ.push_back(e.q_sa);
      ea.push_back(e.alpha);
      // Reported only: the per-cell weighting is not the default.
      ecell.push_back(estimator_errors(m, data, p, NTildeWeighting::kPerCellNormalized).alpha);
    }
    med_q.push_back(median(eq));
    med_Q.push_back(median(eQ));
    med_a.push_back(median(ea));
    med_cell.push_back(median(ecell));
  }
  const auto non_increasing = [](const std::vector<double>& v) {
    return std::is_sorted(v.rbegin(), v.rend());
  };
  const bool ok = non_increasing(med_q) && non_increasing(med_Q) && non_increasing(med_a);
  return {ok, fmt("median errors n=1e3/1e4/1e5: qhat %.3g/%.3g/%.3g, Qhat %.3g/%.3g/%.3g, alphahat %.4g/%.4g/%.4g "
                  "(per-cell weighting: %.3g/%.3g/%.3g)",
                  med_q[0], med_q[1], med_q[2], med_Q[0], med_Q[1], med_Q[2], med_a[0], med_a[1], med_a[2],
                  med_cell[0], med_cell[1], med_cell[2])};
}

// 11. Model-free policy iteration on the (5,5,5,10) instance.
Outcome model_free_performance() {
  const Sizes sz{5, 5, 5, 10};
  const PomdpModel m = random_pomdp(sz, 1, RandomModelOptions{});
  const DeterministicPolicy p0(sz);
  const SolveTrace pi = solve_efficient(m, p0);
  std::vector<double> si(5), oo(5), rf(5);
  detail::parallel_for(5, [&](std::size_t r) {
    const std::uint64_t seed = rep_seed(0, r);
    StateInformedOptions s;
    s.seed = seed;
    si[r] = solve_state_informed(m, p0, s).final_value;
    ObservationOnlyOptions o;
    o.seed = seed;
    oo[r] = solve_observation_only(m, p0, o).final_value;
    rf[r] = reinforce_solve(m, SoftmaxPolicy(sz), ReinforceOptions{}, seed).final_value;
  }, 1);
  const double gap = pi.final_value - pi.initial_value;
  const double msi = median(si), moo = median(oo), mrf = median(rf);
  const bool a = msi >= 0.95 * pi.final_value;
  const bool b = moo >= mrf - 0.05 * gap;
  return {a && b, fmt("PI %.5f; state-informed median %.5f (%.1f%%); observation-only median %.5f vs REINFORCE "
                      "median %.5f (allowance %.4f)",
                      pi.final_value, msi, 100.0 * msi / pi.final_value, moo, mrf, 0.05 * gap)};
}

// 12. Intermediate exploration works best.
Outcome epsilon_sweep() {
  const PomdpModel m = random_pomdp({5, 5, 5, 10}, 1, RandomModelOptions{});
  const std::vector<double> eps{0.01, 0.5, 1.0};
  const auto rows = sweep_epsilon(m, eps, 20, StateInformedOptions{}, 0);
  double med[3];
  for (std::size_t e = 0; e < 3; ++e) {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.epsilon == eps[e]) v.push_back(r.final_value);
    med[e] = median(v);
  }
  return {med[1] > med[0] && med[1] > med[2],
          fmt("median L at eps 0.01/0.5/1.0: %.5f/%.5f/%.5f", med[0], med[1], med[2])};
}

// 13. Files load back bit-identically and summary values match re-evaluation.
Outcome serialization() {
  Checker c;
  const fs::path dir = fs::temp_directory_path() / "mempi_acceptance_io";
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PomdpModel m = random_pomdp({4, 3, 3, 5}, seed, seed % 2 == 0);
    save_model((dir / "m.json").string(), m);
    c.expect(load_model((dir / "m.json").string()) == m, "model round trip differs");
    const DeterministicPolicy p = random_policy(m.sizes(), seed);
    save_policy((dir / "p.json").string(), p);
    c.expect(load_policy((dir / "p.json").string(), m.sizes()) == p, "policy round trip differs");
  }
  ExperimentConfig cfg = config_from_json(json::parse(R"({
    "instance": {"sizes": "4,3,3,4", "seed": 2},
    "methods": ["pi", "pg", "exhaustive", "state_informed", "observation_only", "reinforce"],
    "reps": 2, "episodes": 500, "iterations": 4, "seed": 3
  })"));
  cfg.out = (dir / "run").string();
  run_experiment(cfg);
  const PomdpModel model = load_model((dir / "run" / "model.json").string());
  std::ifstream summary(dir / "run" / "summary.csv");
  std::string line;
  std::getline(summary, line);
  std::size_t rows = 0;
  while (std::getline(summary, line)) {
    std::vector<std::string> cells;
    std::istringstream in(line);
    std::string cell;
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    const json policy = read_json_file((dir / "run" / ("policy_" + cells[0] + "_rep" + cells[1] + ".json")).string());
    const double stored = std::stod(cells[3]);
    c.expect(evaluate_policy_json(model, policy) == stored, "summary value differs for " + cells[0]);
    ++rows;
  }
  return {c.failures == 0 && rows == 9, fmt("5 model/policy round trips, %zu summary rows re-evaluated", rows) +
                                           (c.failures ? " (" + c.why() + ")" : "")};
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;  // 0: no limit
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "monotone convergence", 30, monotone_convergence},
      {2, "global optimum dominance", 60, global_dominance},
      {3, "optimal schedule by enumeration", 10, optimal_schedule_enumeration},
      {4, "operation accounting", 0, operation_accounting},
      {5, "incremental correctness", 0, incremental_correctness},
      {6, "MDP degeneration", 0, mdp_degeneration},
      {7, "gradient correctness", 0, gradient_correctness},
      {8, "PI vs PG efficiency", 300, pi_vs_pg},
      {9, "scale smoke test", 600, scale_smoke},
      {10, "model-free consistency", 0, model_free_consistency},
      {11, "model-free performance", 600, model_free_performance},
      {12, "exploration sweep", 0, epsilon_sweep},
      {13, "serialization round trips", 0, serialization},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (c.limit_seconds > 0 && secs >= c.limit_seconds) {
      out.pass = false;
      out.detail += fmt("; over the %.0f s limit", c.limit_seconds);
    }
    failed += out.pass ? 0 : 1;
    std::printf("%s criterion %2d (%s): %s [%.1f s]\n", out.pass ? "PASS" : "FAIL", c.id, c.name, out.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
