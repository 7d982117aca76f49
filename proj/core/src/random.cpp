#include "bifdr/random.hpp"

#include <boost/random/uniform_int_distribution.hpp>
#include <numeric>
#include <stdexcept>

namespace bifdr {

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t counter) noexcept {
  return mix64(mix64(master) ^ mix64(counter + 0x632be59bd9b4e019ULL));
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    boost::random::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  return idx;
}

std::vector<int> assign_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("assign_folds: k must be positive");
  const auto perm = shuffled_indices(n, seed);
  const std::size_t block = n / static_cast<std::size_t>(k);
  std::vector<int> fold(n, 0);
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t row = perm[pos];
    if (pos < block * static_cast<std::size_t>(k)) {
      fold[row] = static_cast<int>(pos / block);
    } else {
      fold[row] = static_cast<int>(pos - block * static_cast<std::size_t>(k));
    }
  }
  return fold;
}

}  // namespace bifdr
