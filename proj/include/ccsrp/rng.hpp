#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace ccsrp {

// Deterministic, platform-independent RNG (splitmix64 core).
// Streams are derived hierarchically via child(): the same master seed and
// derivation path always yield the same sequence, regardless of how sibling
// streams are consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ kGolden)) {}

  std::uint64_t next_u64() {
    state_ += kGolden;
    return mix(state_);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = mag * std::sin(two_pi * u2);
    has_spare_ = true;
    return mag * std::cos(two_pi * u2);
  }

  // Derive an independent child stream keyed by a path of tags.
  Rng child(std::initializer_list<std::uint64_t> tags) const {
    std::uint64_t h = state_;
    for (std::uint64_t t : tags) {
      h = mix(h ^ mix(t + kGolden));
    }
    return Rng(h, Token{});
  }

  Rng child(std::uint64_t tag) const { return child({tag}); }

 private:
  struct Token {};
  Rng(std::uint64_t raw_state, Token) : state_(raw_state) {}

  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ccsrp
