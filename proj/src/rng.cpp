#include "metaopt/rng.hpp"

#include <cmath>

#include "metaopt/errors.hpp"

namespace metaopt {
namespace {

std::uint64_t splitmix64_next(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::mix(std::uint64_t seed, std::uint64_t key) {
  // Feed the key through the splitmix64 finalizer so that nearby keys land
  // in unrelated streams.
  std::uint64_t x = seed ^ (key + 0x9e3779b97f4a7c15ULL);
  return splitmix64_next(x);
}

std::uint64_t Rng::next_u64() { return splitmix64_next(state_); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // u1 in (0,1] so the log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  cached_normal_ = r * std::sin(a);
  has_cached_normal_ = true;
  return r * std::cos(a);
}

std::uint32_t Rng::below(std::uint32_t n) {
  if (n == 0) throw InvalidArgument("Rng::below: n must be positive");
  // Rejection sampling to avoid modulo bias.
  std::uint64_t limit = (~0ULL) - (~0ULL) % n;
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return static_cast<std::uint32_t>(v % n);
}

}  // namespace metaopt
