#include "oblique/random.hpp"

#include <algorithm>
#include <unordered_set>

namespace oblique {

std::vector<std::uint64_t> sample_without_replacement(std::uint64_t population, std::size_t k,
                                                      std::mt19937_64& rng) {
  if (k >= population) {
    std::vector<std::uint64_t> all(static_cast<std::size_t>(population));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(k * 2);
  for (std::uint64_t j = population - k; j < population; ++j) {
    std::uniform_int_distribution<std::uint64_t> dist(0, j);
    const std::uint64_t t = dist(rng);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  std::vector<std::uint64_t> out(chosen.begin(), chosen.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace oblique
