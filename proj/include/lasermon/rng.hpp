#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <initializer_list>
#include <random>
#include <string_view>

namespace lasermon {

// SplitMix64 finalizer; used to derive independent, order-free stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

// FNV-1a: stable across platforms, unlike std::hash.
constexpr std::uint64_t stable_hash(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {}) {
  return Engine(derive_seed(seed, path));
}

inline double uniform01(Engine& eng) { return std::uniform_real_distribution<double>(0.0, 1.0)(eng); }

inline double uniform(Engine& eng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(eng);
}

inline double normal(Engine& eng, double mean = 0.0, double sd = 1.0) {
  return std::normal_distribution<double>(mean, sd)(eng);
}

template <typename Int>
Int uniform_int(Engine& eng, Int lo, Int hi) {
  return std::uniform_int_distribution<Int>(lo, hi)(eng);
}

// Fisher-Yates on raw engine output: the permutation does not depend on the
// standard library's distribution implementations.
template <typename Container>
void shuffle(Container& v, Engine& eng) {
  using std::swap;
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(eng() % i);
    swap(v[i - 1], v[j]);
  }
}

}  // namespace lasermon
