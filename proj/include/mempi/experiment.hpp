#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "mempi/baselines.hpp"
#include "mempi/io.hpp"
#include "mempi/model.hpp"
#include "mempi/model_free.hpp"
#include "mempi/schedule.hpp"
#include "mempi/solver.hpp"

namespace mempi {

inline constexpr const char* kToolVersion = "0.1.0";

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Instances

struct InstanceSpec {
  std::optional<std::string> model_path;
  Sizes sizes{};
  std::uint64_t seed = 0;
  bool time_invariant = false;
  RandomModelOptions ranges{};

  PomdpModel build() const {
    if (model_path) return load_model(*model_path);
    RandomModelOptions opts = ranges;
    opts.time_invariant = time_invariant;
    return random_pomdp(sizes, seed, opts);
  }

  json to_json() const {
    if (model_path) return json{{"model", *model_path}};
    return json{{"sizes", {{"S", sizes.states}, {"A", sizes.actions}, {"O", sizes.observations}, {"T", sizes.horizon}}},
                {"seed", seed},
                {"time_invariant", time_invariant},
                {"reward", {ranges.reward_lo, ranges.reward_hi}},
                {"terminal", {ranges.terminal_lo, ranges.terminal_hi}}};
  }
};

// "S,A,O,T" sizes.
inline Sizes parse_sizes(const std::string& text) {
  std::vector<std::size_t> v;
  std::istringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) {
    std::size_t used = 0;
    unsigned long x = 0;
    try {
      x = std::stoul(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != token.size()) throw ConfigError("bad size list '" + text + "' (expected S,A,O,T)");
    v.push_back(x);
  }
  if (v.size() != 4) throw ConfigError("bad size list '" + text + "' (expected S,A,O,T)");
  Sizes sz{v[0], v[1], v[2], v[3]};
  sz.require_positive();
  return sz;
}

namespace detail {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

inline std::pair<double, double> range_or(const json& j, const char* key, std::pair<double, double> fallback) {
  if (!j.contains(key)) return fallback;
  const json& r = j.at(key);
  if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number()) {
    throw ConfigError(std::string("config field '") + key + "' must be [lo, hi]");
  }
  return {r[0].get<double>(), r[1].get<double>()};
}

}  // namespace detail

inline InstanceSpec instance_from_json(const json& j) {
  InstanceSpec spec;
  if (j.is_string()) {
    const std::string text = j.get<std::string>();
    if (std::filesystem::exists(text)) spec.model_path = text;
    else spec.sizes = parse_sizes(text);
    return spec;
  }
  if (!j.is_object()) throw ConfigError("instance must be an object, a size list or a model path");
  if (j.contains("model")) {
    spec.model_path = j.at("model").get<std::string>();
    return spec;
  }
  if (!j.contains("sizes")) throw ConfigError("instance needs 'sizes' or 'model'");
  const json& sz = j.at("sizes");
  if (sz.is_string()) {
    spec.sizes = parse_sizes(sz.get<std::string>());
  } else {
    spec.sizes = {detail::get_or<std::size_t>(sz, "S", 0), detail::get_or<std::size_t>(sz, "A", 0),
                  detail::get_or<std::size_t>(sz, "O", 0), detail::get_or<std::size_t>(sz, "T", 0)};
    spec.sizes.require_positive();
  }
  spec.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
  spec.time_invariant = detail::get_or<bool>(j, "time_invariant", false);
  std::tie(spec.ranges.reward_lo, spec.ranges.reward_hi) = detail::range_or(j, "reward", {0.0, 1.0});
  std::tie(spec.ranges.terminal_lo, spec.ranges.terminal_hi) = detail::range_or(j, "terminal", {0.0, 0.0});
  return spec;
}

// ---------------------------------------------------------------------------
// Experiment configuration

inline const std::set<std::string>& known_methods() {
  static const std::set<std::string> names{"pi", "pi_generic", "pg", "exhaustive", "state_informed",
                                           "observation_only", "reinforce"};
  return names;
}

inline bool is_stochastic_method(const std::string& name) {
  return name == "state_informed" || name == "observation_only" || name == "reinforce";
}

struct MethodSpec {
  std::string name;
  std::string label;  // unique within an experiment; defaults to name
  json params = json::object();
};

struct ExperimentConfig {
  InstanceSpec instance;
  std::vector<MethodSpec> methods;
  std::string schedule = "optimal";
  std::size_t reps = 1;
  std::size_t episodes = 5000;
  std::size_t iterations = 30;
  std::uint64_t seed = 0;
  std::string initial_policy = "zeros";  // zeros, random or a policy file
  std::string out;

  void validate() const {
    if (methods.empty()) throw ConfigError("config lists no methods");
    std::set<std::string> labels;
    for (const auto& m : methods) {
      if (!known_methods().count(m.name)) throw ConfigError("unknown method '" + m.name + "'");
      if (!labels.insert(m.label).second) throw ConfigError("duplicate method label '" + m.label + "'");
    }
    if (reps == 0) throw ConfigError("reps must be positive");
    if (episodes == 0) throw ConfigError("episodes must be positive");
    if (iterations == 0) throw ConfigError("iterations must be positive");
  }

  json to_json() const {
    json methods_json = json::array();
    for (const auto& m : methods) {
      json entry = m.params;
      entry["name"] = m.name;
      entry["label"] = m.label;
      methods_json.push_back(std::move(entry));
    }
    return json{{"instance", instance.to_json()}, {"methods", methods_json}, {"schedule", schedule},
                {"reps", reps}, {"episodes", episodes}, {"iterations", iterations}, {"seed", seed},
                {"initial_policy", initial_policy}, {"out", out}};
  }
};

inline MethodSpec method_from_json(const json& j) {
  MethodSpec m;
  if (j.is_string()) {
    m.name = j.get<std::string>();
  } else if (j.is_object() && j.contains("name")) {
    m.name = j.at("name").get<std::string>();
    m.params = j;
    m.params.erase("name");
    m.params.erase("label");
  } else {
    throw ConfigError("method entries must be names or objects with a 'name'");
  }
  m.label = j.is_object() && j.contains("label") ? j.at("label").get<std::string>() : m.name;
  return m;
}

inline ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  if (!j.contains("instance")) throw ConfigError("config needs an 'instance'");
  c.instance = instance_from_json(j.at("instance"));
  if (j.contains("methods")) {
    if (!j.at("methods").is_array()) throw ConfigError("'methods' must be an array");
    for (const auto& m : j.at("methods")) c.methods.push_back(method_from_json(m));
  }
  c.schedule = detail::get_or<std::string>(j, "schedule", c.schedule);
  c.reps = detail::get_or<std::size_t>(j, "reps", c.reps);
  c.episodes = detail::get_or<std::size_t>(j, "episodes", c.episodes);
  c.iterations = detail::get_or<std::size_t>(j, "iterations", c.iterations);
  c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed);
  c.initial_policy = detail::get_or<std::string>(j, "initial_policy", c.initial_policy);
  c.out = detail::get_or<std::string>(j, "out", c.out);
  return c;
}

// ---------------------------------------------------------------------------
// Running

struct SummaryRow {
  std::string method;
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  double final_value = 0.0;
  // Stage improvements performed in total, and up to the last policy change
  // (for gradient methods: k*T at the last accepted step).
  std::size_t stage_improvements = 0;
  std::size_t improvements_to_optimum = 0;
  std::uint64_t mu_updates = 0;
  std::uint64_t q_updates = 0;
  double wall_seconds = 0.0;
};

struct MethodRun {
  SummaryRow summary;
  std::vector<TraceRow> trace;
  std::vector<std::pair<double, double>> plot;  // (x, L^pi)
  json policy;  // deterministic: {"actions"}; softmax: {"theta"}
};

struct ExperimentResult {
  ExperimentConfig config;
  PomdpModel model;
  std::vector<SummaryRow> summary;
  std::vector<std::vector<MethodRun>> runs;  // per method, per rep
};

inline std::size_t improvements_to_last_change(const SolveTrace& trace) {
  std::size_t n = 0;
  for (const auto& s : trace.steps)
    if (s.changed) n = s.index + 1;
  return n;
}

inline json softmax_to_json(const SoftmaxPolicy& policy) {
  const auto theta = policy.parameters();
  return json{{"kind", "softmax"},
              {"sizes", {{"T", policy.horizon()}, {"O", policy.num_observations()}, {"A", policy.num_actions()}}},
              {"theta", std::vector<double>(theta.begin(), theta.end())}};
}

inline SoftmaxPolicy softmax_from_json(const json& j, const Sizes& sizes) {
  const json& theta = detail::sized_array(detail::field(j, "theta"),
                                          sizes.horizon * sizes.observations * sizes.actions, "theta");
  SoftmaxPolicy policy(sizes);
  auto dst = policy.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = detail::number(theta[i], "theta");
  return policy;
}

inline bool is_softmax_json(const json& j) { return j.is_object() && j.contains("theta"); }

// Exact L^pi of a stored policy document.
inline double evaluate_policy_json(const PomdpModel& model, const json& j) {
  if (is_softmax_json(j)) return pg_return(model, softmax_from_json(j, model.sizes()));
  return episodic_return(model, policy_from_json(j, model.sizes()));
}

inline DeterministicPolicy initial_policy_for(const ExperimentConfig& config, const PomdpModel& model) {
  if (config.initial_policy == "zeros") return DeterministicPolicy(model.sizes());
  if (config.initial_policy == "random") return random_policy(model.sizes(), config.seed);
  return load_policy(config.initial_policy, model.sizes());
}

inline std::uint64_t rep_seed(std::uint64_t root, std::size_t rep) { return stream(root, rep).next(); }

inline GradientRunConfig gradient_config_from(const json& p) {
  GradientRunConfig g;
  g.initial_step = detail::get_or(p, "initial_step", g.initial_step);
  g.armijo_c = detail::get_or(p, "armijo_c", g.armijo_c);
  g.backtrack_factor = detail::get_or(p, "backtrack_factor", g.backtrack_factor);
  g.improvement_threshold = detail::get_or(p, "improvement_threshold", g.improvement_threshold);
  g.max_steps = detail::get_or(p, "max_steps", g.max_steps);
  g.step_growth = detail::get_or(p, "step_growth", g.step_growth);
  g.init_scale = detail::get_or(p, "init_scale", g.init_scale);
  g.require_valid();
  return g;
}

inline MethodRun run_method(const PomdpModel& model, const ExperimentConfig& config, const MethodSpec& method,
                            std::size_t rep) {
  using clock = std::chrono::steady_clock;
  const std::uint64_t seed = rep_seed(config.seed, rep);
  const std::size_t T = model.horizon();
  const std::size_t episodes = detail::get_or(method.params, "episodes", config.episodes);
  const std::size_t iterations = detail::get_or(method.params, "iterations", config.iterations);
  const std::string schedule_text = detail::get_or(method.params, "schedule", config.schedule);
  MethodRun run;
  SummaryRow& row = run.summary;
  row.method = method.label;
  row.rep = rep;
  row.seed = is_stochastic_method(method.name) ? seed : 0;
  const auto elapsed = [](clock::time_point start) {
    return std::chrono::duration<double>(clock::now() - start).count();
  };
  DeterministicPolicy start = initial_policy_for(config, model);

  if (method.name == "pi" || method.name == "pi_generic") {
    SolveOptions options;
    options.max_periods = detail::get_or(method.params, "max_periods", options.max_periods);
    const auto t0 = clock::now();
    const SolveTrace trace = method.name == "pi" || T == 1
                                 ? solve_efficient(model, std::move(start), options)
                                 : solve_generic(model, std::move(start), parse_schedule(schedule_text, T), options);
    row.wall_seconds = elapsed(t0);
    row.final_value = trace.final_value;
    row.stage_improvements = trace.steps.size();
    row.improvements_to_optimum = improvements_to_last_change(trace);
    if (!trace.steps.empty()) {
      row.mu_updates = trace.steps.back().mu_updates;
      row.q_updates = trace.steps.back().q_updates;
    }
    run.trace = trace_rows(trace);
    run.plot.emplace_back(0.0, trace.initial_value);
    for (const auto& s : trace.steps) run.plot.emplace_back(static_cast<double>(s.index + 1), s.value);
    run.policy = policy_to_json(trace.policy);
  } else if (method.name == "exhaustive") {
    const double limit = detail::get_or(method.params, "max_policies", kDefaultMaxPolicies);
    const auto t0 = clock::now();
    const ExhaustiveResult result = exhaustive_search(model, limit);
    row.wall_seconds = elapsed(t0);
    row.final_value = result.value;
    run.trace.push_back({0, std::nullopt, true, result.value, 0, 0});
    run.plot.emplace_back(0.0, result.value);
    run.policy = policy_to_json(result.policy);
  } else if (method.name == "pg") {
    const GradientRunConfig g = gradient_config_from(method.params);
    const auto t0 = clock::now();
    const PgTrace trace = pg_solve(model, g, seed);
    row.wall_seconds = elapsed(t0);
    row.final_value = trace.final_value;
    row.stage_improvements = trace.steps.back().stage_improvements;
    row.improvements_to_optimum = row.stage_improvements;
    run.trace = trace_rows(trace);
    for (const auto& s : trace.steps) run.plot.emplace_back(static_cast<double>(s.stage_improvements), s.value);
    run.policy = softmax_to_json(trace.policy);
  } else if (method.name == "state_informed" || method.name == "observation_only") {
    ModelFreeTrace trace;
    const auto t0 = clock::now();
    if (method.name == "state_informed") {
      StateInformedOptions o;
      o.epsilon = detail::get_or(method.params, "epsilon", o.epsilon);
      o.weighting = parse_weighting(detail::get_or<std::string>(method.params, "weighting", to_string(o.weighting)));
      o.simulation.reward_noise = detail::get_or(method.params, "reward_noise", 0.0);
      o.episodes = episodes;
      o.iterations = iterations;
      o.seed = seed;
      trace = solve_state_informed(model, std::move(start), o);
    } else {
      ObservationOnlyOptions o;
      if (T > 1) o.schedule = parse_schedule(schedule_text, T);
      o.simulation.reward_noise = detail::get_or(method.params, "reward_noise", 0.0);
      o.episodes = episodes;
      o.iterations = iterations;
      o.seed = seed;
      trace = solve_observation_only(model, std::move(start), o);
    }
    row.wall_seconds = elapsed(t0);
    row.final_value = trace.final_value;
    row.stage_improvements = trace.steps.size();
    for (const auto& s : trace.steps)
      if (s.changed) row.improvements_to_optimum = s.index + 1;
    run.trace = trace_rows(trace);
    for (const auto& it : trace.iterations) run.plot.emplace_back(static_cast<double>(it.iteration), it.value);
    run.policy = policy_to_json(trace.policy);
  } else if (method.name == "reinforce") {
    ReinforceOptions o;
    o.step_size = detail::get_or(method.params, "step_size", o.step_size);
    o.simulation.reward_noise = detail::get_or(method.params, "reward_noise", 0.0);
    o.episodes_per_iteration = episodes;
    o.iterations = iterations;
    const auto t0 = clock::now();
    const ReinforceTrace trace = reinforce_solve(model, SoftmaxPolicy(model.sizes()), o, seed);
    row.wall_seconds = elapsed(t0);
    row.final_value = trace.final_value;
    run.trace = trace_rows(trace);
    for (const auto& it : trace.iterations) run.plot.emplace_back(static_cast<double>(it.iteration), it.value);
    run.policy = softmax_to_json(trace.policy);
  } else {
    throw ConfigError("unknown method '" + method.name + "'");
  }
  return run;
}

inline constexpr const char* kSummaryHeader =
    "method,rep,seed,final_return,stage_improvements,improvements_to_optimum,mu_updates,q_updates,wall_time_s";

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << kSummaryHeader << '\n';
  for (const auto& r : rows) {
    os << r.method << ',' << r.rep << ',' << r.seed << ',' << format_double(r.final_value) << ','
       << r.stage_improvements << ',' << r.improvements_to_optimum << ',' << r.mu_updates << ','
       << r.q_updates << ',' << format_double(r.wall_seconds) << '\n';
  }
  return os.str();
}

// Deterministic methods run once regardless of `reps`. Artifacts are written
// when config.out is set.
inline ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  ExperimentResult result{config, config.instance.build(), {}, {}};
  const PomdpModel& model = result.model;
  for (const auto& method : config.methods) {
    const std::size_t reps = is_stochastic_method(method.name) ? config.reps : 1;
    std::vector<MethodRun> runs(reps);
    // Repetitions are independent; results are kept in repetition order.
    detail::parallel_for(reps, [&](std::size_t r) { runs[r] = run_method(model, config, method, r); }, 1);
    for (const auto& r : runs) result.summary.push_back(r.summary);
    result.runs.push_back(std::move(runs));
  }
  if (config.out.empty()) return result;

  namespace fs = std::filesystem;
  const fs::path out(config.out);
  fs::create_directories(out);
  json files = json::array();
  const auto emit = [&](const std::string& name, const std::string& text) {
    write_text_file((out / name).string(), text);
    files.push_back(name);
  };
  emit("model.json", model_to_json(model).dump(1) + "\n");
  for (std::size_t m = 0; m < config.methods.size(); ++m) {
    const std::string& label = config.methods[m].label;
    std::ostringstream trace, plot;
    trace << "rep,";
    write_trace_csv(trace, {}, label);
    plot << "method,rep,x,return\n";
    for (const auto& run : result.runs[m]) {
      for (const auto& row : run.trace) {
        std::ostringstream one;
        write_trace_csv(one, {row}, label);
        std::string text = one.str();
        text = text.substr(text.find('\n') + 1);
        trace << run.summary.rep << ',' << text;
      }
      for (const auto& [x, y] : run.plot)
        plot << label << ',' << run.summary.rep << ',' << format_double(x) << ',' << format_double(y) << '\n';
      emit("policy_" + label + "_rep" + std::to_string(run.summary.rep) + ".json", run.policy.dump(1) + "\n");
    }
    emit("trace_" + label + ".csv", trace.str());
    emit("plot_" + label + ".csv", plot.str());
  }
  emit("summary.csv", summary_csv(result.summary));
  json manifest{{"tool", "mempi"}, {"version", kToolVersion}, {"config", config.to_json()},
                {"instance", config.instance.to_json()}, {"seed", config.seed}, {"files", files}};
  write_json_file((out / "manifest.json").string(), manifest);
  return result;
}

// ---------------------------------------------------------------------------
// Schedule comparison

struct ScheduleComparisonRow {
  std::string name;
  UpdateSchedule schedule;
  double predicted_cost = 0.0;  // cost_index
  double final_value = 0.0;
  std::size_t improvements = 0;  // steps performed
  std::size_t improvements_to_optimum = 0;
  std::uint64_t mu_updates = 0;  // totals over the run
  std::uint64_t q_updates = 0;
  std::uint64_t mu_per_period = 0;  // measured over the second period
  std::uint64_t q_per_period = 0;
  double measured_cost = 0.0;  // weighted measured updates per improvement
  bool counts_match = false;  // measured per-period counts equal M*C
};

// Runs solve_generic for every schedule from the same initial policy, with at
// least two periods so that one full steady-state period is measured. Throws
// if measured counts differ from M*C on a time-invariant model.
inline std::vector<ScheduleComparisonRow> compare_schedules(
    const PomdpModel& model, const std::vector<std::pair<std::string, UpdateSchedule>>& schedules,
    const CostWeights& weights = {}, std::optional<DeterministicPolicy> initial = std::nullopt) {
  weights.require_valid();
  std::vector<ScheduleComparisonRow> rows;
  for (const auto& [name, schedule] : schedules) {
    SolveOptions options;
    options.min_periods = 2;
    const SolveTrace trace =
        solve_generic(model, initial ? *initial : DeterministicPolicy(model.sizes()), schedule, options);
    ScheduleComparisonRow row{name, schedule};
    row.predicted_cost = cost_index(schedule, weights);
    row.final_value = trace.final_value;
    row.improvements = trace.steps.size();
    row.improvements_to_optimum = improvements_to_last_change(trace);
    row.mu_updates = trace.steps.back().mu_updates;
    row.q_updates = trace.steps.back().q_updates;
    const std::size_t M = schedule.period();
    if (trace.steps.size() >= 2 * M && model.horizon() > 1) {
      row.mu_per_period = trace.steps[2 * M - 1].mu_updates - trace.steps[M - 1].mu_updates;
      row.q_per_period = trace.steps[2 * M - 1].q_updates - trace.steps[M - 1].q_updates;
      const ScheduleMoves moves = schedule_moves(schedule);
      row.counts_match = row.mu_per_period == moves.up && row.q_per_period == moves.down;
    }
    row.measured_cost = (weights.w_mu * static_cast<double>(row.mu_per_period) +
                         weights.w_q * static_cast<double>(row.q_per_period)) /
                        static_cast<double>(M);
    if (model.time_invariant() && model.horizon() > 1 && !row.counts_match) {
      throw std::logic_error("schedule " + name + ": measured per-period counts differ from M*C");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string schedule_comparison_csv(const std::vector<ScheduleComparisonRow>& rows) {
  std::ostringstream os;
  os << "schedule,stages,period,predicted_cost,measured_cost,mu_per_period,q_per_period,counts_match,"
        "final_return,improvements,improvements_to_optimum,mu_updates,q_updates\n";
  for (const auto& r : rows) {
    os << r.name << ",\"" << r.schedule.to_string() << "\"," << r.schedule.period() << ','
       << format_double(r.predicted_cost) << ',' << format_double(r.measured_cost) << ',' << r.mu_per_period
       << ',' << r.q_per_period << ',' << (r.counts_match ? 1 : 0) << ',' << format_double(r.final_value) << ','
       << r.improvements << ',' << r.improvements_to_optimum << ',' << r.mu_updates << ',' << r.q_updates << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Sweeps

struct EpsilonSweepRow {
  double epsilon = 0.0;
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  double final_value = 0.0;
  std::vector<double> values;  // per iteration, index 0 = initial
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// State-informed runs for every (epsilon, rep); rep r uses rep_seed(root, r)
// for every epsilon.
inline std::vector<EpsilonSweepRow> sweep_epsilon(const PomdpModel& model, const std::vector<double>& epsilons,
                                                  std::size_t reps, StateInformedOptions base,
                                                  std::uint64_t root_seed,
                                                  const DeterministicPolicy* initial = nullptr) {
  std::vector<EpsilonSweepRow> rows(epsilons.size() * reps);
  detail::parallel_for(rows.size(), [&](std::size_t k) {
    const std::size_t e = k / reps, r = k % reps;
    StateInformedOptions o = base;
    o.epsilon = epsilons[e];
    o.seed = rep_seed(root_seed, r);
    const ModelFreeTrace trace =
        solve_state_informed(model, initial ? *initial : DeterministicPolicy(model.sizes()), o);
    EpsilonSweepRow row{epsilons[e], r, o.seed, trace.final_value, {}};
    for (const auto& it : trace.iterations) row.values.push_back(it.value);
    rows[k] = std::move(row);
  }, 1);
  return rows;
}

inline std::string epsilon_sweep_csv(const std::vector<EpsilonSweepRow>& rows) {
  std::ostringstream os;
  os << "epsilon,rep,seed,iteration,return\n";
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.values.size(); ++i)
      os << format_double(r.epsilon) << ',' << r.rep << ',' << r.seed << ',' << i << ',' << format_double(r.values[i])
         << '\n';
  return os.str();
}

struct SizeSweepRow {
  Sizes sizes;
  double pi_seconds = 0.0;
  std::size_t pi_improvements = 0;  // to the last policy change
  double pi_value = 0.0;
  double pg_seconds = 0.0;
  std::size_t pg_improvements = 0;  // k*T at the first step within pg_tolerance of pi_value
  bool pg_reached = false;
  double pg_value = 0.0;
};

// Computation time of model-based PI and PG across instance sizes.
inline std::vector<SizeSweepRow> sweep_size(const std::vector<Sizes>& sizes, std::uint64_t seed,
                                            const GradientRunConfig& pg, double pg_tolerance = 1e-3,
                                            bool run_pg = true) {
  using clock = std::chrono::steady_clock;
  std::vector<SizeSweepRow> rows;
  for (const Sizes& sz : sizes) {
    const PomdpModel model = random_pomdp(sz, seed, RandomModelOptions{});
    SizeSweepRow row{sz};
    auto t0 = clock::now();
    const SolveTrace pi = solve_efficient(model, DeterministicPolicy(sz));
    row.pi_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    row.pi_improvements = improvements_to_last_change(pi);
    row.pi_value = pi.final_value;
    if (run_pg) {
      t0 = clock::now();
      const PgTrace trace = pg_solve(model, pg, seed);
      row.pg_seconds = std::chrono::duration<double>(clock::now() - t0).count();
      row.pg_value = trace.final_value;
      for (const auto& s : trace.steps) {
        if (s.value >= pi.final_value - pg_tolerance) {
          row.pg_improvements = s.stage_improvements;
          row.pg_reached = true;
          break;
        }
      }
      if (!row.pg_reached) row.pg_improvements = trace.steps.back().stage_improvements;
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string size_sweep_csv(const std::vector<SizeSweepRow>& rows) {
  std::ostringstream os;
  os << "S,A,O,T,pi_seconds,pi_improvements,pi_return,pg_seconds,pg_improvements,pg_reached,pg_return\n";
  for (const auto& r : rows) {
    os << r.sizes.states << ',' << r.sizes.actions << ',' << r.sizes.observations << ',' << r.sizes.horizon << ','
       << format_double(r.pi_seconds) << ',' << r.pi_improvements << ',' << format_double(r.pi_value) << ','
       << format_double(r.pg_seconds) << ',' << r.pg_improvements << ',' << (r.pg_reached ? 1 : 0) << ','
       << format_double(r.pg_value) << '\n';
  }
  return os.str();
}

}  // namespace mempi
