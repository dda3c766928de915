#pragma once

#include <cstdint>
#include <cmath>
#include <string>

namespace wsovod {

// Splitmix64-based generator. Hand-rolled so that streams are reproducible
// across compilers (std::uniform_real_distribution is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0,1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

  double normal() {
    // Box-Muller, fresh pair each call
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::uint64_t state_;
};

// FNV-1a, used to derive per-image / per-name seeds from a global seed.
inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_combine(std::uint64_t seed, const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace wsovod
