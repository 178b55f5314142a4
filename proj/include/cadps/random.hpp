#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Dense>

namespace cadps {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Derives a child seed from a parent seed and a path of integer tags. The
// mapping is a pure function, so work items can be seeded independently of
// the order in which they are executed.
inline std::uint64_t derive_seed(std::uint64_t parent,
                                 std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t s = mix64(parent);
  for (auto tag : path) s = mix64(s ^ mix64(tag + 0x632BE59BD9B4E019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n01{0.0, 1.0};
  return n01(rng);
}

inline Eigen::VectorXd standard_normal_vector(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd z(n);
  std::normal_distribution<double> n01{0.0, 1.0};
  for (Eigen::Index i = 0; i < n; ++i) z[i] = n01(rng);
  return z;
}

}  // namespace cadps
