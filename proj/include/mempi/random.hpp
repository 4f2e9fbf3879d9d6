#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace mempi {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Thin wrapper over mt19937_64. The engine is fully specified by the
// standard; the conversions below are written out so that draws are
// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    auto k = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  // Draws an index from a probability row that sums to 1.
  std::size_t categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      acc += probs[i];
      last_positive = i;
      if (u < acc) return i;
    }
    return last_positive;
  }

 private:
  std::mt19937_64 engine_;
};

// Independent stream `index` derived from one root seed. Episode i of a batch
// always uses stream(root, i), so batch contents do not depend on how the
// episodes are scheduled across workers.
inline Rng stream(std::uint64_t root_seed, std::uint64_t index) {
  return Rng(splitmix64(splitmix64(root_seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL)));
}

}  // namespace mempi
