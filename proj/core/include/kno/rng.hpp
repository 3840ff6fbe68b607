#pragma once

#include <cmath>
#include <cstdint>

namespace kno {

// Deterministic xoshiro256++ generator seeded through splitmix64.
// Standard-library distributions are implementation defined, so all sampling
// here is spelled out explicitly; datasets built from the same seed are
// byte-identical across runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& si : s_) si = splitmix64(x);
    have_spare_ = false;
    spare_ = 0.0;
  }

  /// Independent per-sample stream: stream(seed, i) != stream(seed, j) for i != j.
  static Rng stream(std::uint64_t base_seed, std::uint64_t stream_index) {
    std::uint64_t x = base_seed;
    std::uint64_t a = splitmix64(x);
    return Rng(a ^ (0x9e3779b97f4a7c15ULL * (stream_index + 1)));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [a, b).
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  /// Standard normal via Box-Muller (deterministic, caches the spare draw).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so the log is finite.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static std::uint64_t rotl(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
  }

  std::uint64_t s_[4];
  bool have_spare_;
  double spare_;
};

}  // namespace kno
