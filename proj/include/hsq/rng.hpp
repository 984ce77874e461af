#pragma once

#include <cmath>
#include <cstdint>

namespace hsq {

// splitmix64 finalizer. Every seeded random quantity in the library is derived
// from this mix so results are identical across platforms and thread counts.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return mix64(seed ^ (mix64(v) + 0x9e3779b97f4a7c15ull));
}

namespace detail {

// Maps to (0, 1]; never returns 0 so logs are safe.
inline double u64_to_unit(std::uint64_t u) {
  return static_cast<double>(u >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

inline double box_muller(std::uint64_t u1, std::uint64_t u2) {
  const double a = u64_to_unit(u1);
  const double b = u64_to_unit(u2);
  return std::sqrt(-2.0 * std::log(a)) * std::cos(6.283185307179586477 * b);
}

}  // namespace detail

// Sequential stream used for parameter init and synthetic data. One stream per
// seed; consumption order is part of the determinism contract.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  // Uniform in (0, 1].
  double next_unit() { return detail::u64_to_unit(next_u64()); }

  double next_normal() {
    const std::uint64_t a = next_u64();
    const std::uint64_t b = next_u64();
    return detail::box_muller(a, b);
  }

  // N(0, std^2) rejection-sampled to |z| <= 2*std, the usual clipped init.
  double next_trunc_normal(double stddev) {
    for (;;) {
      const double z = next_normal();
      if (z >= -2.0 && z <= 2.0) return z * stddev;
    }
  }

private:
  std::uint64_t state_;
};

// Counter-based normal draw: the value for (seed, index) does not depend on
// any other draw, so routing noise is identical no matter how tokens are
// scheduled across threads.
inline double normal_at(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t base = hash_combine(seed, index);
  return detail::box_muller(mix64(base), mix64(base + 0x632be59bd9b4e019ull));
}

}  // namespace hsq
