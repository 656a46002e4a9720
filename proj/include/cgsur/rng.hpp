#pragma once

#include <cstdint>
#include <random>

namespace cgsur {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to derive independent child seeds from a root
/// seed and a stream counter.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based seed splitting: stream `id` of root seed `root`.
constexpr std::uint64_t split_seed(std::uint64_t root, std::uint64_t id) {
  return mix64(mix64(root) ^ mix64(id + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t root, std::uint64_t id) { return Rng(split_seed(root, id)); }

/// Named seed streams, so dataset, training and evaluation randomness stay
/// independent when derived from one root seed.
namespace stream {
inline constexpr std::uint64_t labeled = 1;
inline constexpr std::uint64_t unlabeled = 2;
inline constexpr std::uint64_t virtual_queries = 3;
inline constexpr std::uint64_t validation = 4;
inline constexpr std::uint64_t training = 5;
inline constexpr std::uint64_t evaluation = 6;
inline constexpr std::uint64_t uq = 7;
inline constexpr std::uint64_t constraints = 8;
}  // namespace stream

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

}  // namespace cgsur
