#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mempi/random.hpp"

namespace mempi {

// One period (tau_0, ..., tau_{M-1}) of a periodic stage sequence over
// {0..T-1}. The infinite schedule is its cyclic repetition, closed by
// tau_M = tau_0.
class UpdateSchedule {
 public:
  UpdateSchedule() = default;
  UpdateSchedule(std::vector<std::size_t> stages, std::size_t horizon)
      : stages_(std::move(stages)), horizon_(horizon) {
    if (auto problem = check(); !problem.empty()) throw std::invalid_argument(problem);
  }

  std::size_t period() const noexcept { return stages_.size(); }
  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t operator[](std::size_t l) const { return stages_[l % stages_.size()]; }
  const std::vector<std::size_t>& stages() const noexcept { return stages_; }

  bool operator==(const UpdateSchedule&) const = default;

  // Empty string when the sequence is onto and has no cyclic immediate repeat.
  static std::string problem_with(const std::vector<std::size_t>& stages, std::size_t horizon) {
    if (horizon == 0) return "schedule horizon must be positive";
    if (stages.empty()) return "schedule must contain at least one stage";
    std::vector<bool> seen(horizon, false);
    for (std::size_t l = 0; l < stages.size(); ++l) {
      if (stages[l] >= horizon) {
        return "schedule stage " + std::to_string(stages[l]) + " out of range for T=" +
               std::to_string(horizon);
      }
      seen[stages[l]] = true;
      const std::size_t next = stages[(l + 1) % stages.size()];
      if (next == stages[l]) {
        return "schedule repeats stage " + std::to_string(next) + " at position " +
               std::to_string(l) + " (cyclically)";
      }
    }
    for (std::size_t t = 0; t < horizon; ++t) {
      if (!seen[t]) return "schedule is not onto: stage " + std::to_string(t) + " never updated";
    }
    return {};
  }

  std::string to_string() const {
    std::string out;
    for (std::size_t l = 0; l < stages_.size(); ++l) {
      if (l) out += ',';
      out += std::to_string(stages_[l]);
    }
    return out;
  }

 private:
  std::string check() const { return problem_with(stages_, horizon_); }

  std::vector<std::size_t> stages_;
  std::size_t horizon_ = 0;
};

struct CostWeights {
  double w_mu = 1.0;
  double w_q = 1.0;

  void require_valid() const {
    if (w_mu < 0.0 || w_q < 0.0 || !(w_mu + w_q > 0.0)) {
      throw std::invalid_argument("cost weights must be nonnegative with w_mu + w_q > 0");
    }
  }
};

// Total forward (mu) and backward (Q) stage moves over one period, with the
// cyclic closure. By periodicity the two are always equal.
struct ScheduleMoves {
  std::size_t up = 0;
  std::size_t down = 0;
};

inline ScheduleMoves schedule_moves(const UpdateSchedule& schedule) {
  ScheduleMoves moves;
  const std::size_t M = schedule.period();
  for (std::size_t l = 0; l < M; ++l) {
    const std::size_t from = schedule[l], to = schedule[l + 1];
    if (to > from) moves.up += to - from;
    else moves.down += from - to;
  }
  return moves;
}

// C = (1/M) sum_l [w_mu max(tau_{l+1} - tau_l, 0) + w_q max(0, tau_l - tau_{l+1})].
inline double cost_index(const UpdateSchedule& schedule, const CostWeights& weights = {}) {
  weights.require_valid();
  const auto moves = schedule_moves(schedule);
  return (weights.w_mu * static_cast<double>(moves.up) +
          weights.w_q * static_cast<double>(moves.down)) /
         static_cast<double>(schedule.period());
}

// (0, 1, ..., T-1, T-2, ..., 1): a forward sweep followed by a backward sweep.
inline UpdateSchedule optimal_schedule(std::size_t horizon) {
  if (horizon < 2) {
    throw std::invalid_argument("optimal_schedule needs T >= 2 (single-stage problems need no schedule)");
  }
  std::vector<std::size_t> stages;
  stages.reserve(2 * (horizon - 1));
  for (std::size_t t = 0; t < horizon; ++t) stages.push_back(t);
  for (std::size_t t = horizon - 2; t >= 1; --t) stages.push_back(t);
  return UpdateSchedule(std::move(stages), horizon);
}

inline UpdateSchedule forward_schedule(std::size_t horizon) {
  std::vector<std::size_t> stages(horizon);
  for (std::size_t t = 0; t < horizon; ++t) stages[t] = t;
  return UpdateSchedule(std::move(stages), horizon);
}

inline UpdateSchedule backward_schedule(std::size_t horizon) {
  std::vector<std::size_t> stages(horizon);
  for (std::size_t t = 0; t < horizon; ++t) stages[t] = horizon - 1 - t;
  return UpdateSchedule(std::move(stages), horizon);
}

// "optimal", "forward", "backward" or a comma-separated stage list.
inline UpdateSchedule parse_schedule(std::string_view text, std::size_t horizon) {
  if (text == "optimal") return optimal_schedule(horizon);
  if (text == "forward") return forward_schedule(horizon);
  if (text == "backward") return backward_schedule(horizon);
  std::vector<std::size_t> stages;
  std::string token;
  std::istringstream in{std::string(text)};
  while (std::getline(in, token, ',')) {
    const auto first = token.find_first_not_of(" \t");
    const auto last = token.find_last_not_of(" \t");
    if (first == std::string::npos) throw std::invalid_argument("empty stage in schedule list");
    token = token.substr(first, last - first + 1);
    std::size_t used = 0;
    unsigned long value = 0;
    try {
      value = std::stoul(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size() || token.front() == '-') {
      throw std::invalid_argument("unrecognized schedule '" + std::string(text) +
                                  "' (expected optimal, forward, backward or a stage list)");
    }
    stages.push_back(value);
  }
  return UpdateSchedule(std::move(stages), horizon);
}

// Lexicographically smallest rotation.
inline std::vector<std::size_t> canonical_rotation(const std::vector<std::size_t>& stages) {
  std::vector<std::size_t> best = stages;
  std::vector<std::size_t> candidate(stages.size());
  for (std::size_t shift = 1; shift < stages.size(); ++shift) {
    std::rotate_copy(stages.begin(), stages.begin() + static_cast<std::ptrdiff_t>(shift),
                     stages.end(), candidate.begin());
    if (candidate < best) best = candidate;
  }
  return best;
}

namespace detail {

inline bool is_primitive(const std::vector<std::size_t>& stages) {
  const std::size_t M = stages.size();
  for (std::size_t d = 1; d < M; ++d) {
    if (M % d != 0) continue;
    bool repeats = true;
    for (std::size_t i = d; i < M && repeats; ++i) repeats = stages[i] == stages[i - d];
    if (repeats) return false;
  }
  return true;
}

}  // namespace detail

inline constexpr std::size_t kMaxEnumeratedPeriod = 10;

// All valid schedules with period <= max_period, one representative per
// cyclic-shift class (its smallest rotation). Sequences that merely repeat a
// shorter period describe the same schedule as that shorter one and are
// listed only once, at their minimal period.
inline std::vector<UpdateSchedule> enumerate_schedules(std::size_t horizon, std::size_t max_period) {
  if (horizon == 0 || max_period < horizon || max_period > kMaxEnumeratedPeriod) {
    throw std::invalid_argument("enumerate_schedules requires 1 <= T <= max_period <= " +
                                std::to_string(kMaxEnumeratedPeriod));
  }
  std::vector<UpdateSchedule> out;
  for (std::size_t M = std::max<std::size_t>(horizon, 2); M <= max_period; ++M) {
    std::vector<std::size_t> seq(M, 0);
    // Depth-first over sequences with no adjacent repeats; the smallest
    // rotation of an onto sequence starts with stage 0, so fix seq[0] = 0.
    auto recurse = [&](auto&& self, std::size_t pos) -> void {
      if (pos == M) {
        if (seq.back() == seq.front()) return;
        if (!UpdateSchedule::problem_with(seq, horizon).empty()) return;
        if (canonical_rotation(seq) != seq || !detail::is_primitive(seq)) return;
        out.emplace_back(seq, horizon);
        return;
      }
      for (std::size_t t = 0; t < horizon; ++t) {
        if (t == seq[pos - 1]) continue;
        seq[pos] = t;
        self(self, pos + 1);
      }
    };
    if (horizon >= 2) recurse(recurse, 1);
  }
  return out;
}

// Random valid schedule: a shuffled onto pass over all stages plus `extra`
// additional stages inserted where they do not create a cyclic repeat.
inline UpdateSchedule random_schedule(std::size_t horizon, std::size_t extra, Rng& rng) {
  if (horizon < 2) throw std::invalid_argument("random_schedule needs T >= 2");
  std::vector<std::size_t> stages(horizon);
  for (std::size_t t = 0; t < horizon; ++t) stages[t] = t;
  for (std::size_t i = horizon - 1; i > 0; --i) std::swap(stages[i], stages[rng.below(i + 1)]);
  for (std::size_t k = 0; k < extra; ++k) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const std::size_t pos = rng.below(stages.size() + 1);
      const std::size_t stage = rng.below(horizon);
      const std::size_t before = stages[(pos + stages.size() - 1) % stages.size()];
      const std::size_t after = stages[pos % stages.size()];
      if (stage == before || stage == after) continue;
      stages.insert(stages.begin() + static_cast<std::ptrdiff_t>(pos), stage);
      break;
    }
  }
  return UpdateSchedule(std::move(stages), horizon);
}

}  // namespace mempi
