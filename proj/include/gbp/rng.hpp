#pragma once

#include <cmath>
#include <cstdint>

namespace gbp {

// splitmix64: tiny, fast, and fully portable across compilers, which keeps
// seeded runs bit-identical no matter how the work is scheduled.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  SplitMix64 g(a ^ (b * 0x9e3779b97f4a7c15ULL + 0x6a09e667f3bcc909ULL));
  return g.next();
}

// Deterministic random stream. Streams derived from the same base seed but
// different ids are independent, so rollouts can be evaluated on any thread
// (or none) and still draw identical values.
class NoiseStream {
 public:
  NoiseStream() : gen_(0) {}
  explicit NoiseStream(std::uint64_t seed) : gen_(seed) {}

  static NoiseStream substream(std::uint64_t base, std::uint64_t a,
                               std::uint64_t b = 0, std::uint64_t c = 0) {
    return NoiseStream(hash_combine(hash_combine(hash_combine(base, a), b), c));
  }

  std::uint64_t next_u64() { return gen_.next(); }

  double uniform01() { return (gen_.next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller without the spare-value cache: every call consumes exactly two
  // uniforms, so the draw count never depends on call history.
  double gaussian(double mean, double stddev) {
    double u1 = uniform01();
    double u2 = uniform01();
    if (stddev <= 0.0) return mean;
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

 private:
  SplitMix64 gen_;
};

}  // namespace gbp
