#ifndef CPL_RNG_HPP_
#define CPL_RNG_HPP_

#include <cmath>
#include <cstdint>

namespace cpl {

// Deterministic PRNG used everywhere randomness is needed. The stream is
// xoshiro256** 1.0 (Blackman & Vigna, 2018), state-seeded with splitmix64
// (Steele, Lea & Vigna). Constants below are the published ones:
//   splitmix64: increment 0x9E3779B97F4A7C15,
//               mix 0xBF58476D1CE4E5B9 / 0x94D049BB133111EB
//   xoshiro256**: scrambler s[1]*5 rotl 7 *9, rotation 45 in the update.
// std::uniform_int_distribution is implementation-defined and is never used.

struct SplitMix64 {
  std::uint64_t state;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& word : state_) word = sm.next();
  }

  /// Substream for candidate `counter`; reproducible independent of
  /// scheduling (counter-based seeding, not stream jumping).
  static Rng substream(std::uint64_t seed, std::uint64_t counter) {
    SplitMix64 sm(seed);
    std::uint64_t base = sm.next();
    return Rng(base ^ (0x9E3779B97F4A7C15ULL * (counter + 1)));
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Unbiased integer in [0, n) by rejection sampling.
  std::uint64_t bounded(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % n;
    }
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; consumes two uniforms per pair.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace cpl

#endif  // CPL_RNG_HPP_
