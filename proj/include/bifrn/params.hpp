#pragma once

#include <random>
#include <string>
#include <vector>

#include "bifrn/rng.hpp"
#include "bifrn/tensor.hpp"

namespace bifrn {

/// Handle to a model tensor under its checkpoint name. `trainable` is false
/// for buffers (running statistics) and for frozen ablation scalars.
template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values), true);
}

}  // namespace bifrn
