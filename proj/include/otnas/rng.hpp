#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "otnas/types.hpp"

namespace otnas {

using Rng = std::mt19937_64;

// Engine keyed by a tuple of seeds, e.g. make_rng({seed, epoch}).
inline Rng make_rng(std::initializer_list<Seed> keys) {
  std::vector<std::uint32_t> words;
  words.reserve(keys.size() * 2);
  for (const Seed k : keys) {
    words.push_back(static_cast<std::uint32_t>(k & 0xFFFFFFFFu));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace otnas
