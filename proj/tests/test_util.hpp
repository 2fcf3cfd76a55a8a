#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "bifrn/rng.hpp"
#include "bifrn/tensor.hpp"

namespace testutil {

template <typename T>
bifrn::Tensor<T> random_tensor(bifrn::Shape shape, bifrn::Rng& rng, double sd = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<T> v(bifrn::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return bifrn::Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

/// Largest |analytic - numeric| / max(1, |numeric|) over every input
/// element, for a scalar-valued `loss`.
inline double fd_error(const std::function<bifrn::Tensor<double>()>& loss,
                       std::vector<bifrn::Tensor<double>> inputs, double eps = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  bifrn::backward(loss());
  double worst = 0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto vals = t.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      double up, down;
      {
        bifrn::NoGradGuard guard;
        vals[i] = orig + eps;
        up = loss().item();
        vals[i] = orig - eps;
        down = loss().item();
      }
      vals[i] = orig;
      const double numeric = (up - down) / (2 * eps);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

template <typename T>
double max_abs_diff(std::span<const T> a, std::span<const T> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace testutil
