#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mempi/baselines.hpp"
#include "mempi/model.hpp"
#include "mempi/model_free.hpp"
#include "mempi/simulation.hpp"
#include "mempi/solver.hpp"

namespace mempi {

using json = nlohmann::json;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Models and policies (JSON)

// Every stage is written out, also for time-invariant models.
inline json model_to_json(const PomdpModel& model) {
  const std::size_t S = model.num_states(), A = model.num_actions(), O = model.num_observations(),
                    T = model.horizon();
  json j;
  j["sizes"] = {{"S", S}, {"A", A}, {"O", O}, {"T", T}};
  j["time_invariant"] = model.time_invariant();
  json transition = json::array(), reward = json::array(), observation = json::array();
  for (std::size_t t = 0; t < T; ++t) {
    json ts = json::array(), rs = json::array();
    for (std::size_t s = 0; s < S; ++s) {
      json ta = json::array();
      for (std::size_t a = 0; a < A; ++a) {
        const auto row = model.transition_row(t, s, a);
        ta.push_back(std::vector<double>(row.begin(), row.end()));
      }
      ts.push_back(std::move(ta));
      const auto r = model.reward_row(t, s);
      rs.push_back(std::vector<double>(r.begin(), r.end()));
    }
    transition.push_back(std::move(ts));
    reward.push_back(std::move(rs));
  }
  for (std::size_t t = 0; t <= T; ++t) {
    json os = json::array();
    for (std::size_t s = 0; s < S; ++s) {
      const auto row = model.observation_row(t, s);
      os.push_back(std::vector<double>(row.begin(), row.end()));
    }
    observation.push_back(std::move(os));
  }
  j["transition"] = std::move(transition);
  j["observation"] = std::move(observation);
  j["reward"] = std::move(reward);
  j["initial"] = std::vector<double>(model.initial().begin(), model.initial().end());
  j["terminal"] = std::vector<double>(model.terminal().begin(), model.terminal().end());
  return j;
}

namespace detail {

inline const json& field(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name)) throw FormatError(std::string("missing field '") + name + "'");
  return j.at(name);
}

inline const json& sized_array(const json& j, std::size_t n, const std::string& where) {
  if (!j.is_array() || j.size() != n) {
    throw FormatError(where + ": expected an array of length " + std::to_string(n));
  }
  return j;
}

inline double number(const json& j, const std::string& where) {
  if (!j.is_number()) throw FormatError(where + ": expected a number");
  return j.get<double>();
}

inline std::string at(const char* name, std::initializer_list<std::size_t> idx) {
  std::string out = name;
  for (std::size_t i : idx) out += "[" + std::to_string(i) + "]";
  return out;
}

}  // namespace detail

// Rows are checked, never renormalized, so a saved model loads back
// bit-identically.
inline PomdpModel model_from_json(const json& j) {
  using detail::field;
  using detail::number;
  using detail::sized_array;
  const json& sz = field(j, "sizes");
  Sizes sizes;
  try {
    sizes = {field(sz, "S").get<std::size_t>(), field(sz, "A").get<std::size_t>(),
             field(sz, "O").get<std::size_t>(), field(sz, "T").get<std::size_t>()};
  } catch (const json::exception& e) {
    throw FormatError(std::string("sizes: ") + e.what());
  }
  sizes.require_positive();
  const bool invariant = j.contains("time_invariant") && j.at("time_invariant").get<bool>();
  const std::size_t S = sizes.states, A = sizes.actions, O = sizes.observations, T = sizes.horizon;
  PomdpModel model(sizes, invariant);

  const json& tr = sized_array(field(j, "transition"), T, "transition");
  const json& rw = sized_array(field(j, "reward"), T, "reward");
  const json& ob = sized_array(field(j, "observation"), T + 1, "observation");
  const auto check_same = [&](double stored, double read, const std::string& where) {
    if (stored != read) throw FormatError(where + ": time-invariant model has differing stages");
  };
  for (std::size_t t = 0; t < T; ++t) {
    sized_array(tr[t], S, detail::at("transition", {t}));
    sized_array(rw[t], S, detail::at("reward", {t}));
    for (std::size_t s = 0; s < S; ++s) {
      sized_array(tr[t][s], A, detail::at("transition", {t, s}));
      sized_array(rw[t][s], A, detail::at("reward", {t, s}));
      for (std::size_t a = 0; a < A; ++a) {
        const std::string where = detail::at("transition", {t, s, a});
        const json& row = sized_array(tr[t][s][a], S, where);
        auto dst = model.transition_row(t, s, a);
        for (std::size_t n = 0; n < S; ++n) {
          const double v = number(row[n], where);
          if (invariant && t > 0) check_same(dst[n], v, where);
          else dst[n] = v;
        }
        const double r = number(rw[t][s][a], detail::at("reward", {t, s, a}));
        if (invariant && t > 0) check_same(model.reward(t, s, a), r, detail::at("reward", {t, s, a}));
        else model.reward_row(t, s)[a] = r;
      }
    }
  }
  for (std::size_t t = 0; t <= T; ++t) {
    sized_array(ob[t], S, detail::at("observation", {t}));
    for (std::size_t s = 0; s < S; ++s) {
      const std::string where = detail::at("observation", {t, s});
      const json& row = sized_array(ob[t][s], O, where);
      auto dst = model.observation_row(t, s);
      for (std::size_t o = 0; o < O; ++o) {
        const double v = number(row[o], where);
        if (invariant && t > 0) check_same(dst[o], v, where);
        else dst[o] = v;
      }
    }
  }
  const json& init = sized_array(field(j, "initial"), S, "initial");
  const json& term = sized_array(field(j, "terminal"), S, "terminal");
  for (std::size_t s = 0; s < S; ++s) {
    model.initial()[s] = number(init[s], detail::at("initial", {s}));
    model.terminal()[s] = number(term[s], detail::at("terminal", {s}));
  }
  require_valid(model);
  return model;
}

inline json policy_to_json(const DeterministicPolicy& policy) {
  json actions = json::array();
  for (std::size_t t = 0; t < policy.horizon(); ++t) {
    const auto stage = policy.stage(t);
    actions.push_back(std::vector<std::size_t>(stage.begin(), stage.end()));
  }
  return json{{"actions", std::move(actions)}};
}

// The policy is validated against `sizes`.
inline DeterministicPolicy policy_from_json(const json& j, const Sizes& sizes) {
  const json& actions = detail::sized_array(detail::field(j, "actions"), sizes.horizon, "actions");
  DeterministicPolicy policy(sizes);
  for (std::size_t t = 0; t < sizes.horizon; ++t) {
    const json& row = detail::sized_array(actions[t], sizes.observations, detail::at("actions", {t}));
    for (std::size_t o = 0; o < sizes.observations; ++o) {
      if (!row[o].is_number_unsigned()) throw FormatError(detail::at("actions", {t, o}) + ": expected an action index");
      try {
        policy.set(t, o, row[o].get<std::size_t>());
      } catch (const std::out_of_range& e) {
        throw FormatError(detail::at("actions", {t, o}) + ": " + e.what());
      }
    }
  }
  return policy;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_json_file(const std::string& path, const json& j) { write_text_file(path, j.dump(1) + "\n"); }

inline PomdpModel load_model(const std::string& path) { return model_from_json(read_json_file(path)); }
inline void save_model(const std::string& path, const PomdpModel& model) {
  write_json_file(path, model_to_json(model));
}
inline DeterministicPolicy load_policy(const std::string& path, const Sizes& sizes) {
  return policy_from_json(read_json_file(path), sizes);
}
inline void save_policy(const std::string& path, const DeterministicPolicy& policy) {
  write_json_file(path, policy_to_json(policy));
}

// ---------------------------------------------------------------------------
// Traces (CSV)

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  for (int precision = 15; precision <= 17; ++precision) {
    std::ostringstream os;
    os << std::setprecision(precision) << x;
    if (std::stod(os.str()) == x) return os.str();
  }
  return {};
}

struct TraceRow {
  std::size_t index = 0;
  std::optional<std::size_t> stage;  // empty for all-stage steps (gradient methods)
  bool changed = false;
  double value = 0.0;
  std::uint64_t mu_updates = 0;
  std::uint64_t q_updates = 0;
};

inline std::vector<TraceRow> trace_rows(const SolveTrace& trace) {
  std::vector<TraceRow> rows;
  rows.reserve(trace.steps.size());
  for (const auto& s : trace.steps) rows.push_back({s.index, s.stage, s.changed, s.value, s.mu_updates, s.q_updates});
  return rows;
}

// Row 0 is the initial point; index counts gradient steps.
inline std::vector<TraceRow> trace_rows(const PgTrace& trace) {
  std::vector<TraceRow> rows;
  for (const auto& s : trace.steps) rows.push_back({s.step, std::nullopt, s.step > 0, s.value, 0, 0});
  return rows;
}

inline std::vector<TraceRow> trace_rows(const ReinforceTrace& trace) {
  std::vector<TraceRow> rows;
  for (const auto& s : trace.iterations) rows.push_back({s.iteration, std::nullopt, s.iteration > 0, s.value, 0, 0});
  return rows;
}

// One row per iteration; the stage column is filled when an iteration
// improved a single stage.
inline std::vector<TraceRow> trace_rows(const ModelFreeTrace& trace) {
  std::vector<TraceRow> rows;
  for (const auto& it : trace.iterations) {
    TraceRow row{it.iteration, std::nullopt, it.changes > 0, it.value, 0, 0};
    std::size_t steps_in_iteration = 0;
    for (const auto& s : trace.steps) {
      if (s.iteration == it.iteration) {
        ++steps_in_iteration;
        row.stage = s.stage;
      }
    }
    if (steps_in_iteration != 1) row.stage.reset();
    rows.push_back(row);
  }
  return rows;
}

inline constexpr const char* kTraceHeader = "improvement_index,stage,changed,return,mu_updates,q_updates";

inline void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows,
                            const std::string& method = {}) {
  if (!method.empty()) out << "method,";
  out << kTraceHeader << '\n';
  for (const auto& r : rows) {
    if (!method.empty()) out << method << ',';
    out << r.index << ',' << (r.stage ? std::to_string(*r.stage) : std::string()) << ','
        << (r.changed ? 1 : 0) << ',' << format_double(r.value) << ',' << r.mu_updates << ','
        << r.q_updates << '\n';
  }
}

inline std::string trace_csv(const std::vector<TraceRow>& rows, const std::string& method = {}) {
  std::ostringstream os;
  write_trace_csv(os, rows, method);
  return os.str();
}

// ---------------------------------------------------------------------------
// Datasets (CSV)
//
//   # mempi-dataset mode=<mode> S=.. A=.. O=.. T=.. episodes=.. seed=.. epsilon=.. explore_stage=..
//   episode,t,[state,]observation,action,reward
//
// t = T rows carry the final observation (and state); their action is empty
// and their reward column holds V_T(S_T).

inline void write_dataset_csv(std::ostream& out, const EpisodeDataset& data) {
  const Sizes& sz = data.sizes();
  const std::size_t T = data.horizon();
  out << "# mempi-dataset mode=" << to_string(data.mode()) << " S=" << sz.states << " A=" << sz.actions
      << " O=" << sz.observations << " T=" << T << " episodes=" << data.episodes()
      << " seed=" << data.seed() << " epsilon=" << format_double(data.behavior().epsilon)
      << " explore_stage="
      << (data.behavior().explore_stage ? std::to_string(*data.behavior().explore_stage) : std::string("none"))
      << '\n';
  out << (data.has_states() ? "episode,t,state,observation,action,reward\n" : "episode,t,observation,action,reward\n");
  for (std::size_t i = 0; i < data.episodes(); ++i) {
    for (std::size_t t = 0; t <= T; ++t) {
      out << i << ',' << t << ',';
      if (data.has_states()) out << data.state(i, t) << ',';
      out << data.observation(i, t) << ',';
      if (t < T) out << data.action(i, t) << ',' << format_double(data.reward(i, t));
      else out << ',' << format_double(data.terminal_reward(i));
      out << '\n';
    }
  }
}

inline EpisodeDataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# mempi-dataset", 0) != 0) {
    throw FormatError("dataset: missing '# mempi-dataset' header line");
  }
  std::istringstream header(line.substr(15));
  std::string token, mode_text;
  Sizes sz;
  std::size_t episodes = 0;
  std::uint64_t seed = 0;
  BehaviorDescriptor behavior;
  bool have[5] = {false, false, false, false, false};
  while (header >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw FormatError("dataset header: bad token '" + token + "'");
    const std::string key = token.substr(0, eq), value = token.substr(eq + 1);
    try {
      if (key == "mode") mode_text = value;
      else if (key == "S") sz.states = std::stoul(value), have[0] = true;
      else if (key == "A") sz.actions = std::stoul(value), have[1] = true;
      else if (key == "O") sz.observations = std::stoul(value), have[2] = true;
      else if (key == "T") sz.horizon = std::stoul(value), have[3] = true;
      else if (key == "episodes") episodes = std::stoul(value), have[4] = true;
      else if (key == "seed") seed = std::stoull(value);
      else if (key == "epsilon") behavior.epsilon = std::stod(value);
      else if (key == "explore_stage" && value != "none") behavior.explore_stage = std::stoul(value);
    } catch (const std::exception&) {
      throw FormatError("dataset header: bad value in '" + token + "'");
    }
  }
  DatasetMode mode;
  if (mode_text == "state_informed") mode = DatasetMode::kStateInformed;
  else if (mode_text == "observation_only") mode = DatasetMode::kObservationOnly;
  else throw FormatError("dataset header: unknown mode '" + mode_text + "'");
  for (bool h : have)
    if (!h) throw FormatError("dataset header: S, A, O, T and episodes are required");
  sz.require_positive();
  const std::size_t T = sz.horizon;
  const bool states = mode == DatasetMode::kStateInformed;
  EpisodeDataset data(mode, sz, episodes, seed, behavior);
  std::getline(in, line);  // column names
  const std::size_t expected_rows = episodes * (T + 1);
  std::vector<bool> seen(expected_rows, false);
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream row(line);
    while (std::getline(row, token, ',')) cells.push_back(token);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    const std::size_t width = states ? 6 : 5;
    if (cells.size() != width) {
      throw FormatError("dataset line " + std::to_string(line_no) + ": expected " + std::to_string(width) + " columns");
    }
    try {
      std::size_t c = 0;
      const std::size_t i = std::stoul(cells[c++]), t = std::stoul(cells[c++]);
      if (i >= episodes || t > T) throw FormatError("index out of range");
      if (states) {
        const std::size_t s = std::stoul(cells[c++]);
        if (s >= sz.states) throw FormatError("state out of range");
        data.set_state(i, t, s);
      }
      const std::size_t o = std::stoul(cells[c++]);
      if (o >= sz.observations) throw FormatError("observation out of range");
      data.set_observation(i, t, o);
      const std::string& action = cells[c++];
      const double reward = std::stod(cells[c++]);
      if (t < T) {
        const std::size_t a = std::stoul(action);
        if (a >= sz.actions) throw FormatError("action out of range");
        data.set_action(i, t, a);
        data.set_reward(i, t, reward);
      } else {
        data.set_terminal_reward(i, reward);
      }
      seen[i * (T + 1) + t] = true;
    } catch (const FormatError& e) {
      throw FormatError("dataset line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::exception&) {
      throw FormatError("dataset line " + std::to_string(line_no) + ": malformed value");
    }
  }
  for (std::size_t k = 0; k < expected_rows; ++k) {
    if (!seen[k]) {
      throw FormatError("dataset: missing row for episode " + std::to_string(k / (T + 1)) + ", t=" +
                        std::to_string(k % (T + 1)));
    }
  }
  return data;
}

inline void save_dataset(const std::string& path, const EpisodeDataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_dataset_csv(out, data);
}

inline EpisodeDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_dataset_csv(in);
}

}  // namespace mempi
