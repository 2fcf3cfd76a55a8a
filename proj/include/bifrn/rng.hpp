#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bifrn {

using Rng = std::mt19937_64;

/// Seed for the named substream `name`/`index` of `root`. Different names or
/// indices give statistically unrelated streams.
std::uint64_t derive_seed(std::uint64_t root, std::string_view name, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t root, std::string_view name, std::uint64_t index = 0) {
  return Rng(derive_seed(root, name, index));
}

}  // namespace bifrn
