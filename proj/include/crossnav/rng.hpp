#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace crossnav {

using Rng = std::mt19937_64;

/// Engine seeded from a tuple of 64-bit keys through std::seed_seq.
template <typename... Keys>
Rng make_rng(Keys... keys) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t k : {static_cast<std::uint64_t>(keys)...}) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace crossnav
