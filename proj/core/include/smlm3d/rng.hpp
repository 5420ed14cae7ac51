#pragma once

#include <cstdint>

namespace smlm3d {

// xoshiro256++ seeded through splitmix64. Self-contained so that streams are
// bit-reproducible independent of the standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed);

  uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n > 0.
  uint64_t below(uint64_t n);

  // log-uniform in [lo, hi], lo > 0.
  double log_uniform(double lo, double hi);

  // Standard normal via Box-Muller (fixed two-draw consumption).
  double normal();

  // Poisson sample; Knuth multiplication for small means, Hörmann's PTRS
  // transformed rejection for large ones.
  int64_t poisson(double mean);

  // Derives an independent stream for a substream index (frame, step, ...).
  static uint64_t derive(uint64_t seed, uint64_t index);

 private:
  uint64_t s_[4];
};

}  // namespace smlm3d
