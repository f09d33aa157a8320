#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string_view>

namespace kwd {

// splitmix64 finalizer, used to fold tags into stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// FNV-1a over the tag string so stream names hash stably across platforms.
inline std::uint64_t tag(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Deterministic generator. All distributions are hand-rolled on top of the
// raw 64-bit output so results are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t u64() { return eng_(); }

  // Uniform in [0,1) with 53-bit resolution.
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("uniform: lo > hi");
    return lo + (hi - lo) * uniform();
  }

  // Unbiased integer in [0, n) via rejection sampling.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("below: n must be positive");
    const std::uint64_t lim = ~0ull - ~0ull % n;
    std::uint64_t x;
    do {
      x = u64();
    } while (x >= lim);
    return x % n;
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    if (lo > hi) throw std::invalid_argument("uniform_int: lo > hi");
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller, one variate per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0,1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 eng_;
};

// Stream derivation: fold (seed, tag, indices...) into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t s = mix64(seed ^ 0x6b77642d726e67ull);
  for (std::uint64_t p : parts) s = mix64(s ^ p);
  return s;
}

inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  return Rng(derive_seed(seed, parts));
}

}  // namespace kwd
