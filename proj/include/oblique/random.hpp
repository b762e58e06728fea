#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace oblique {

// splitmix64 finalizer; good avalanche, cheap.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-style seed derivation: the derived stream depends only on the root
// seed and the tags, never on call order, so parallel schedules stay
// reproducible.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t tag) {
  return mix64(root ^ mix64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t tag_a, std::uint64_t tag_b) {
  return mix64(derive_seed(root, tag_a) ^ mix64(tag_b + 0x51ed270b0a5e55c3ULL));
}

inline std::uint64_t tag_from_name(std::string_view name) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Floyd's algorithm: k distinct values from [0, population), sorted ascending.
// O(k) draws regardless of population size.
std::vector<std::uint64_t> sample_without_replacement(std::uint64_t population, std::size_t k,
                                                      std::mt19937_64& rng);

}  // namespace oblique
