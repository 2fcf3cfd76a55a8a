#pragma once

#include <cstddef>
#include <vector>

#include "bifrn/params.hpp"
#include "bifrn/tensor.hpp"

namespace bifrn {

/// Fusion weights and temperature. tau = exp(log_tau) keeps tau > 0; the
/// lambdas are unconstrained and start at 0.5.
template <typename T>
struct MetricParams {
  Tensor<T> lambda1, lambda2, log_tau;

  static MetricParams init();
  T tau() const;
  ParamList<T> parameters(bool train_lambda1 = true, bool train_lambda2 = true) const;
};

/// ||query_v - query_hat||^2, divided by the element count when `normalize`.
template <typename T>
Tensor<T> dist_q_to_s(const Tensor<T>& query_v, const Tensor<T>& query_hat, bool normalize);

/// ||support_v - support_hat||^2, divided by the element count when `normalize`.
template <typename T>
Tensor<T> dist_s_to_q(const Tensor<T>& support_v, const Tensor<T>& support_hat, bool normalize);

/// tau * (lambda1 * d_qs + lambda2 * d_sq), elementwise over equal shapes.
template <typename T>
Tensor<T> fuse(const Tensor<T>& d_qs, const Tensor<T>& d_sq, const MetricParams<T>& m);

/// Row-wise softmax of the negated distances.
template <typename T>
Tensor<T> normalize_distances(const Tensor<T>& distances);

/// Mean negative log normalized score of each query's true class, computed
/// from the raw distances with a stable log-softmax.
template <typename T>
Tensor<T> episode_loss(const Tensor<T>& distances, const std::vector<std::size_t>& labels);

/// Per-query argmax of a normalized [queries, classes] table; ties go to the
/// lowest class index.
template <typename T>
std::vector<std::size_t> predict(const Tensor<T>& normalized);

/// Per-query distances d and normalized scores.
template <typename T>
struct DistanceTable {
  Tensor<T> distances;   // [queries, classes]
  Tensor<T> normalized;  // row-wise softmax(-distances)

  static DistanceTable from_distances(Tensor<T> d);
  std::size_t queries() const { return distances.dim(0); }
  std::size_t classes() const { return distances.dim(1); }
};

}  // namespace bifrn
