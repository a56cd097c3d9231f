#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

// Deterministic draws on top of mt19937_64. The standard <random>
// distributions are implementation-defined, so seeded runs would not be
// reproducible across standard libraries; these are.
namespace prokcat::rng {

/// Uniform in [0, 1) with 53 random bits.
inline double uniform(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform(g);
}

/// Uniform integer in [0, n).
inline std::uint64_t uniform_int(std::mt19937_64& g, std::uint64_t n) {
  // Rejection sampling to avoid modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % n);
  std::uint64_t x;
  do {
    x = g();
  } while (x >= limit);
  return x % n;
}

/// Standard normal via Box-Muller.
inline double normal(std::mt19937_64& g) {
  double u1 = uniform(g);
  while (u1 <= 0.0) u1 = uniform(g);
  const double u2 = uniform(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline double normal(std::mt19937_64& g, double mean, double stddev) {
  return mean + stddev * normal(g);
}

/// Fisher-Yates with uniform_int; deterministic for a given seed.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& g) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_int(g, i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace prokcat::rng
