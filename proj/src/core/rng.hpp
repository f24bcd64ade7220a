#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace spsd {

// Independent generator for a tuple of keys, e.g. (seed, domain, sample index).
inline std::mt19937_64 derived_rng(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t k : keys) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace spsd
