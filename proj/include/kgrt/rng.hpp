#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace kgrt {

// Seeded generator with platform-independent draws. The engine is the
// standard mt19937_64; the distributions are implemented here because the
// standard ones are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  // Uniform integer in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(std::string_view bytes);

std::uint64_t splitmix64(std::uint64_t x);

// Per-stage seed derived from the run seed and a stage name, so that any
// stage can be rerun in isolation.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage);

}  // namespace kgrt
