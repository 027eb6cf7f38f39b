#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace maoml {

/// One round of the splitmix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based seed derivation: folds every word through splitmix64 so that
/// (seed, a, b, ...) tuples map to well-separated streams.
constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> words) noexcept {
  std::uint64_t h = 0x6A09E667F3BCC908ULL;
  for (auto w : words) h = splitmix64(h ^ splitmix64(w));
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::initializer_list<std::uint64_t> words) { return Rng(derive_seed(words)); }

}  // namespace maoml
