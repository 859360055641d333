#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace ptp {

using Rng = std::mt19937_64;

namespace detail {

// splitmix64; used to decorrelate (seed, stream) pairs before seeding the engine.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Named substreams so independent consumers (shuffling, perturbation, init)
// never share an engine state.
enum class RngStream : std::uint64_t {
  kInit = 1,
  kShuffle = 2,
  kPerturb = 3,
  kLandscape = 4,
  kData = 5,
};

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(detail::splitmix64(detail::splitmix64(seed) ^ stream));
}

inline Rng make_rng(std::uint64_t seed, RngStream stream) {
  return make_rng(seed, static_cast<std::uint64_t>(stream));
}

inline double rand_normal(Rng& rng, double sigma = 1.0) {
  if (sigma == 0.0) return 0.0;
  std::normal_distribution<double> dist(0.0, sigma);
  return dist(rng);
}

inline std::size_t rand_index(Rng& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("rand_index: n must be positive");
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

// First k entries of a seeded Fisher-Yates pass over [0, n).
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
  if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> dist(i, n - 1);
    std::swap(idx[i], idx[dist(rng)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace ptp
