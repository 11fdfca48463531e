#pragma once

#include <cstdint>

namespace metaopt {

// Deterministic counter-style RNG built on splitmix64.
//
// Everything random in this library is drawn from an Rng seeded by hashing
// together a user seed and a handful of context counters (iteration, rollout,
// timestep, ...). That keeps every draw reproducible bit for bit across
// platforms and across checkpoint/resume boundaries without serializing any
// generator state. std::normal_distribution is deliberately avoided: its
// output differs between standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Key-derivation helper: fold an extra counter into a seed.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t key);
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2) {
    return mix(mix(seed, k1), k2);
  }
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2,
                           std::uint64_t k3) {
    return mix(mix(seed, k1, k2), k3);
  }

  std::uint64_t next_u64();

  // Uniform in [0, 1), 53 random bits.
  double uniform();

  // Standard normal via Box-Muller (both values consumed per pair, one cached).
  double normal();

  // Uniform integer in [0, n). n must be positive.
  std::uint32_t below(std::uint32_t n);

 private:
  std::uint64_t state_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace metaopt
