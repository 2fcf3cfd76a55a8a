#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bifrn/rng.hpp"
#include "bifrn/tensor.hpp"

namespace bifrn {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0;  // worst input tensor
  bool passed = false;
};

/// Builds the checked output from the current values of the inputs. The
/// inputs are shared handles, so the function may also ignore its argument
/// and read tensors it captured.
using GradFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of sum(f(inputs) * W), with W a fixed
/// random weighting, against central differences. Per input tensor the
/// error is |g_analytic - g_numeric| / max(|g_analytic| + |g_numeric|, 1e-5)
/// in the 2-norm; the largest is returned.
double gradient_error(const GradFn& f, const std::vector<Tensor<double>>& inputs, Rng& rng, double eps = 1e-6);

/// Every differentiable primitive plus end-to-end episode losses on tiny
/// models (d=8, r=4, 3-way 2-shot, 2 queries per class).
std::vector<GradCheckResult> run_gradchecks(std::uint64_t seed, double tolerance = 1e-3);

}  // namespace bifrn
