// mempi command-line harness.
//
//   mempi_cli generate      --instance S,A,O,T --seed N --out DIR
//   mempi_cli solve         [--config FILE] --instance ... --method pi --method pg ... --out DIR
//   mempi_cli evaluate      --model FILE --policy FILE
//   mempi_cli compare       --instance ... --schedule optimal --schedule forward ... --out DIR
//   mempi_cli sweep-epsilon --instance ... --epsilon 0.01 --epsilon 0.5 ... --reps N --out DIR
//   mempi_cli sweep-size    --size 20,2,2,5 --size 20,3,3,5 ... --out DIR
//
// Failures print {"error": {...}} on stderr and exit nonzero.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mempi/mempi.hpp"

using namespace mempi;
namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string instance;
  std::optional<std::uint64_t> seed;
  bool time_invariant = false;
  std::string out;
};

void add_instance_flags(CLI::App* cmd, CommonFlags& f, bool required = true) {
  auto* opt = cmd->add_option("--instance", f.instance, "sizes S,A,O,T or a model JSON file");
  if (required) opt->required();
  cmd->add_option("--seed", f.seed, "instance and run seed");
  cmd->add_flag("--time-invariant", f.time_invariant, "share one transition/reward/observation slice over stages");
  cmd->add_option("--out", f.out, "output directory");
}

InstanceSpec instance_from_flags(const CommonFlags& f) {
  InstanceSpec spec = instance_from_json(json(f.instance));
  if (!spec.model_path) {
    spec.seed = f.seed.value_or(0);
    spec.time_invariant = f.time_invariant;
  }
  return spec;
}

// Writes files under `out` and a manifest listing them.
class OutputDir {
 public:
  OutputDir(std::string out, std::string command) : out_(std::move(out)), command_(std::move(command)) {
    if (!out_.empty()) fs::create_directories(out_);
  }
  bool enabled() const { return !out_.empty(); }
  void write(const std::string& name, const std::string& text) {
    if (!enabled()) return;
    write_text_file((fs::path(out_) / name).string(), text);
    files_.push_back(name);
  }
  void manifest(const json& inputs, std::uint64_t seed) const {
    if (!enabled()) return;
    write_json_file((fs::path(out_) / "manifest.json").string(),
                    json{{"tool", "mempi"}, {"version", kToolVersion}, {"command", command_},
                         {"inputs", inputs}, {"seed", seed}, {"files", files_}});
  }

 private:
  std::string out_, command_;
  std::vector<std::string> files_;
};

void print_error(const std::string& type, const std::string& message, int code) {
  std::cerr << json{{"error", {{"type", type}, {"message", message}, {"exit_code", code}}}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memoryless policy iteration for finite-horizon POMDPs"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  // generate
  CommonFlags gen;
  auto* generate = app.add_subcommand("generate", "write a random instance as JSON");
  add_instance_flags(generate, gen);
  double reward_lo = 0.0, reward_hi = 1.0, terminal_lo = 0.0, terminal_hi = 0.0;
  generate->add_option("--reward-lo", reward_lo);
  generate->add_option("--reward-hi", reward_hi);
  generate->add_option("--terminal-lo", terminal_lo);
  generate->add_option("--terminal-hi", terminal_hi);

  // solve
  CommonFlags sol;
  std::string config_path, schedule, initial_policy;
  std::vector<std::string> methods;
  std::optional<std::size_t> episodes, reps, iterations;
  auto* solve = app.add_subcommand("solve", "run methods on one instance");
  add_instance_flags(solve, sol, false);
  solve->add_option("--config", config_path, "experiment config JSON; flags override its fields");
  solve->add_option("--method", methods, "pi, pi_generic, pg, exhaustive, state_informed, observation_only, reinforce");
  solve->add_option("--schedule", schedule, "optimal, forward, backward or a stage list");
  solve->add_option("--episodes", episodes, "episodes per iteration");
  solve->add_option("--reps", reps, "repetitions of stochastic methods");
  solve->add_option("--iterations", iterations, "model-free iterations");
  solve->add_option("--initial-policy", initial_policy, "zeros, random or a policy file");

  // evaluate
  std::string model_path, policy_path;
  auto* evaluate = app.add_subcommand("evaluate", "exact return of a stored policy");
  evaluate->add_option("--model", model_path, "model JSON")->required();
  evaluate->add_option("--policy", policy_path, "policy JSON (deterministic or softmax)")->required();

  // compare
  CommonFlags cmp;
  std::vector<std::string> schedules;
  double w_mu = 1.0, w_q = 1.0;
  auto* compare = app.add_subcommand("compare", "compare update schedules on one instance");
  add_instance_flags(compare, cmp);
  compare->add_option("--schedule", schedules, "schedules to compare (default: optimal, forward, backward)");
  compare->add_option("--w-mu", w_mu, "weight of a forward update");
  compare->add_option("--w-q", w_q, "weight of a backward update");

  // sweep-epsilon
  CommonFlags swe;
  std::vector<double> epsilons{0.01, 0.5, 1.0};
  std::size_t sweep_reps = 20, sweep_episodes = 5000, sweep_iterations = 30;
  std::string weighting = "as_printed";
  auto* sweep_eps = app.add_subcommand("sweep-epsilon", "state-informed PI across exploration rates");
  add_instance_flags(sweep_eps, swe);
  sweep_eps->add_option("--epsilon", epsilons, "exploration rates");
  sweep_eps->add_option("--reps", sweep_reps, "repetitions per rate");
  sweep_eps->add_option("--episodes", sweep_episodes, "episodes per iteration");
  sweep_eps->add_option("--iterations", sweep_iterations, "PI iterations per run");
  sweep_eps->add_option("--weighting", weighting, "as_printed or per_cell");

  // sweep-size
  std::vector<std::string> size_list;
  std::uint64_t size_seed = 0;
  std::string size_out;
  bool no_pg = false;
  auto* sweep_sz = app.add_subcommand("sweep-size", "PI and PG computation time across sizes");
  sweep_sz->add_option("--size", size_list, "S,A,O,T (default: S=20, T=5, O=A in 2..10)");
  sweep_sz->add_option("--seed", size_seed);
  sweep_sz->add_option("--out", size_out);
  sweep_sz->add_flag("--no-pg", no_pg, "skip the gradient baseline");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what(), 2);
    return 2;
  }

  try {
    if (*generate) {
      InstanceSpec spec = instance_from_flags(gen);
      if (spec.model_path) throw ConfigError("generate needs sizes, not a model file");
      spec.ranges.reward_lo = reward_lo;
      spec.ranges.reward_hi = reward_hi;
      spec.ranges.terminal_lo = terminal_lo;
      spec.ranges.terminal_hi = terminal_hi;
      const PomdpModel model = spec.build();
      const std::string text = model_to_json(model).dump(1) + "\n";
      if (gen.out.empty()) {
        std::cout << text;
      } else {
        OutputDir out(gen.out, "generate");
        out.write("model.json", text);
        out.manifest(json{{"instance", spec.to_json()}}, spec.seed);
        std::cout << json{{"model", (fs::path(gen.out) / "model.json").string()}}.dump() << "\n";
      }
    } else if (*solve) {
      ExperimentConfig config;
      if (!config_path.empty()) {
        config = config_from_json(read_json_file(config_path));
      } else if (sol.instance.empty()) {
        throw ConfigError("solve needs --instance or --config");
      }
      if (!sol.instance.empty()) config.instance = instance_from_flags(sol);
      else if (sol.seed && !config.instance.model_path) config.instance.seed = *sol.seed;
      if (sol.seed) config.seed = *sol.seed;
      if (!methods.empty()) {
        config.methods.clear();
        for (const auto& m : methods) config.methods.push_back(method_from_json(json(m)));
      }
      if (!schedule.empty()) config.schedule = schedule;
      if (episodes) config.episodes = *episodes;
      if (reps) config.reps = *reps;
      if (iterations) config.iterations = *iterations;
      if (!initial_policy.empty()) config.initial_policy = initial_policy;
      if (!sol.out.empty()) config.out = sol.out;
      const ExperimentResult result = run_experiment(config);
      std::cout << summary_csv(result.summary);
    } else if (*evaluate) {
      const PomdpModel model = load_model(model_path);
      const double value = evaluate_policy_json(model, read_json_file(policy_path));
      std::cout << json{{"return", value}, {"return_text", format_double(value)}}.dump() << "\n";
    } else if (*compare) {
      const InstanceSpec spec = instance_from_flags(cmp);
      const PomdpModel model = spec.build();
      const std::size_t T = model.horizon();
      if (schedules.empty()) schedules = {"optimal", "forward", "backward"};
      std::vector<std::pair<std::string, UpdateSchedule>> list;
      for (const auto& s : schedules) list.emplace_back(s, parse_schedule(s, T));
      const auto rows = compare_schedules(model, list, CostWeights{w_mu, w_q});
      const std::string csv = schedule_comparison_csv(rows);
      std::cout << csv;
      OutputDir out(cmp.out, "compare");
      out.write("model.json", model_to_json(model).dump(1) + "\n");
      out.write("schedule_comparison.csv", csv);
      out.manifest(json{{"instance", spec.to_json()}, {"schedules", schedules}, {"weights", {w_mu, w_q}}}, spec.seed);
    } else if (*sweep_eps) {
      const InstanceSpec spec = instance_from_flags(swe);
      const PomdpModel model = spec.build();
      StateInformedOptions base;
      base.episodes = sweep_episodes;
      base.iterations = sweep_iterations;
      base.weighting = parse_weighting(weighting);
      if (sweep_reps == 0) throw ConfigError("reps must be positive");
      const std::uint64_t root = swe.seed.value_or(0);
      const auto rows = sweep_epsilon(model, epsilons, sweep_reps, base, root);
      std::ostringstream medians;
      medians << "epsilon,median_final_return\n";
      for (double e : epsilons) {
        std::vector<double> v;
        for (const auto& r : rows)
          if (r.epsilon == e) v.push_back(r.final_value);
        medians << format_double(e) << ',' << format_double(median(v)) << '\n';
      }
      std::cout << medians.str();
      OutputDir out(swe.out, "sweep-epsilon");
      out.write("model.json", model_to_json(model).dump(1) + "\n");
      out.write("epsilon_sweep.csv", epsilon_sweep_csv(rows));
      out.write("epsilon_medians.csv", medians.str());
      out.manifest(json{{"instance", spec.to_json()}, {"epsilons", epsilons}, {"reps", sweep_reps},
                        {"episodes", sweep_episodes}, {"iterations", sweep_iterations}, {"weighting", weighting}},
                   root);
    } else if (*sweep_sz) {
      std::vector<Sizes> sizes;
      for (const auto& s : size_list) sizes.push_back(parse_sizes(s));
      if (sizes.empty())
        for (std::size_t k = 2; k <= 10; ++k) sizes.push_back({20, k, k, 5});
      const auto rows = sweep_size(sizes, size_seed, GradientRunConfig{}, 1e-3, !no_pg);
      const std::string csv = size_sweep_csv(rows);
      std::cout << csv;
      OutputDir out(size_out, "sweep-size");
      out.write("size_sweep.csv", csv);
      json listed = json::array();
      for (const auto& s : sizes) listed.push_back({s.states, s.actions, s.observations, s.horizon});
      out.manifest(json{{"sizes", listed}, {"pg", !no_pg}}, size_seed);
    }
  } catch (const ConfigError& e) {
    print_error("config", e.what(), 3);
    return 3;
  } catch (const FormatError& e) {
    print_error("format", e.what(), 4);
    return 4;
  } catch (const PolicySpaceTooLarge& e) {
    print_error("guard", e.what(), 5);
    return 5;
  } catch (const std::exception& e) {
    print_error("runtime", e.what(), 1);
    return 1;
  }
  return 0;
}
