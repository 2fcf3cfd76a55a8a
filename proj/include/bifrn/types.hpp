#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace bifrn {

enum class Split { base, val, novel };

std::string_view split_name(Split s);
/// Parses "base" / "val" / "novel"; throws ContractError otherwise.
Split parse_split(std::string_view text);

/// Channel-major image, pixels in [0, 1].
struct Image {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;
  int label = -1;
  Split split = Split::base;
};

}  // namespace bifrn
