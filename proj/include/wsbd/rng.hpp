// Seeded random streams with stable output across platforms.
// All stochastic code in the library draws through this wrapper so that a
// run is reproducible from its seed alone; distribution transforms are done
// by hand because the std::*_distribution adapters are not guaranteed to
// produce the same sequence everywhere.

#pragma once

#include <cstdint>
#include <random>

namespace wsbd {

// splitmix64 finalizer; used to derive independent stream seeds from one
// user-facing seed (data order, mask sampling and shot noise must not share
// a stream, otherwise consuming one perturbs the others).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1) with 53 random bits
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  int rademacher() { return (next_u64() & 1u) ? 1 : -1; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace wsbd
