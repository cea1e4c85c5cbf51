#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedlev {

using Rng = std::mt19937_64;

/// Derives an independent 64-bit seed from a master seed and a list of keys
/// (client id, round, cell index, ...). Uses the splitmix64 finalizer so that
/// nearby keys give unrelated streams.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys);

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(derive_seed(master, keys));
}

}  // namespace fedlev
