#pragma once

#include <cstdint>

namespace nprior {

// Splittable SplitMix64 generator keyed by (seed, stream). Two generators
// with different stream indices produce independent sequences, so per-pixel
// draws can be filled in any order and still be reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0);

  uint64_t next_u64();

  // Uniform in the open interval (0, 1).
  double next_unit();

  // Standard normal via Box-Muller; consumes two uniforms per call.
  double next_normal();

  // Uniform integer in [0, bound); bound must be nonzero.
  uint64_t next_below(uint64_t bound);

 private:
  uint64_t state_;
};

// Exact Poisson sampler for any lambda >= 0: product method for small
// lambda, Hoermann's PTRS transformed rejection for large lambda.
long sample_poisson(Rng& rng, double lambda);

}  // namespace nprior
