#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace bifdr {

/// Engine used throughout. Its output sequence is fixed by the standard, and the
/// distributions are taken from Boost.Random so draws are identical across
/// standard libraries.
using Rng = std::mt19937_64;

/// SplitMix64 finaliser.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Seed for stream `counter` of a master seed. Streams for distinct counters are
/// unrelated, so work can be scheduled in any order.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t counter) noexcept;

/// Uniformly shuffled 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

/// Seeded shuffle, then contiguous blocks of floor(n/k); the n mod k leftover rows
/// go round-robin to folds 0, 1, ... Returns the fold index of every row.
std::vector<int> assign_folds(std::size_t n, int k, std::uint64_t seed);

}  // namespace bifdr
