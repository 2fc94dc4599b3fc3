#pragma once

#include <cstdint>

namespace d2s {

// Deterministic random source: a splitmix64-seeded xoshiro256++ generator.
// The algorithm is fixed so that identical seeds and identical call
// sequences produce identical streams on every platform. Floating-point
// draws are derived from the integer stream with fixed arithmetic; none of
// the std::random distributions are used because their output is
// implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform in [0, 1), 53 random mantissa bits.
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform in [0, 1), 24 random mantissa bits.
  float uniform_float();

  // Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double normal();

  // Unbiased integer in [0, n); n must be nonzero. Rejection sampling.
  uint64_t below(uint64_t n);

 private:
  uint64_t state_[4];
};

// One splitmix64 step; advances `state` and returns the mixed output.
uint64_t splitmix64(uint64_t& state);

// Derives an independent child seed from a base seed and an index.
// Used for per-sample dataset seeds so generation parallelizes.
uint64_t derive_seed(uint64_t base, uint64_t index);

}  // namespace d2s
