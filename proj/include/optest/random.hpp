#pragma once

// Counter-derived random streams. A stream is identified by (seed, a, b, c),
// typically (run seed, cohort, student, purpose), so that any student's draws
// can be regenerated without replaying anyone else's.

#include <cstdint>
#include <limits>
#include <random>

namespace optest {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

enum class StreamPurpose : std::uint64_t { Skill = 1, Features = 2, TestScore = 3, Policy = 4, Pool = 5 };

// SplitMix64 generator; satisfies UniformRandomBitGenerator.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0,
                        std::uint64_t c = 0) noexcept
      : state_(splitmix64(splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b) ^ c)) {}

  RandomStream(std::uint64_t seed, std::uint64_t cohort, std::uint64_t student,
               StreamPurpose purpose) noexcept
      : RandomStream(seed, cohort, student, static_cast<std::uint64_t>(purpose)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double normal(double mean, double sd) {
    std::normal_distribution<double> dist(mean, sd);
    return dist(*this);
  }

 private:
  std::uint64_t state_;
};

}  // namespace optest
