#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace towerlab {

// Seed-derivation domains. Every stochastic stream in the project is keyed by
// (base seed, domain, indices) so that runs are reproducible and resumable and
// so that train/eval instance streams can never collide.
enum class SeedDomain : std::uint64_t {
  GenTop = 1,
  GenSide = 2,
  TrainInstance = 3,
  Sample = 4,
  EvalInstance = 5,
  Probe = 6,
  ParamInit = 7,
  Baseline = 8,
  Interleave = 9,
  Shuffle = 10,
  Folds = 11,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, SeedDomain domain,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t x = splitmix64(base ^ (static_cast<std::uint64_t>(domain) << 32));
  x = splitmix64(x ^ a);
  x = splitmix64(x ^ b);
  return x;
}

constexpr std::uint64_t kEvalSeedBit = 0x8000000000000000ULL;

// Training instance seeds always have the top bit clear, evaluation/probe
// instance seeds always have it set. Disjointness is structural, not hoped-for.
inline std::uint64_t train_instance_seed(std::uint64_t base, std::uint64_t step,
                                         std::uint64_t idx) {
  return derive_seed(base, SeedDomain::TrainInstance, step, idx) & ~kEvalSeedBit;
}

inline std::uint64_t eval_instance_seed(std::uint64_t base, std::uint64_t task,
                                        std::uint64_t idx) {
  return derive_seed(base, SeedDomain::EvalInstance, task, idx) | kEvalSeedBit;
}

inline std::uint64_t probe_instance_seed(std::uint64_t base, std::uint64_t idx) {
  return derive_seed(base, SeedDomain::Probe, idx) | kEvalSeedBit;
}

// mt19937_64 is bit-exact across platforms; the std distributions are not.
// This wrapper owns all raw-bits-to-value conversions so streams are portable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t u64() { return engine_(); }

  // Unbiased integer in [lo, hi], rejection sampled.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<std::int64_t>(u64());  // full 64-bit span
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    std::uint64_t x;
    do {
      x = u64();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % range);
  }

  double uniform01() {
    return static_cast<double>(u64() >> 11) * 0x1.0p-53;
  }

  double uniform_real(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller, always consumes two uniforms per call.
  double normal(double mu = 0.0, double sigma = 1.0) {
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    return mu + sigma * r * std::cos(two_pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace towerlab
