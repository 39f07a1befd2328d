#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace higen {

// Seeded random source. The raw engine (mt19937_64) is fully specified by the
// standard; the distributions here are hand-rolled because the standard
// library's distribution algorithms are implementation-defined, and runs must
// be reproducible byte-for-byte.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_range(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(uniform_int(static_cast<uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller. One value per call; the pair's second
  // member is cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Geometric with support {1, 2, ...} and the given mean (>= 1). Sampled by
  // inversion of the CDF.
  int geometric(double mean) {
    if (mean <= 1.0) return 1;
    const double p = 1.0 / mean;
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return 1 + static_cast<int>(std::floor(std::log(u) / std::log(1.0 - p)));
  }

  // Deterministic Fisher-Yates shuffle.
  template <typename Vec>
  void shuffle(Vec& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent stream; used so that sub-tasks (per-epoch masking,
  // per-cell grid runs) do not consume draws from the parent stream.
  Rng fork(uint64_t salt) {
    uint64_t s = engine_();
    return Rng(s ^ (salt * 0x9e3779b97f4a7c15ULL));
  }

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace higen
