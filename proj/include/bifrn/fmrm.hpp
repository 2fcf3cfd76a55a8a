#pragma once

#include <cstddef>

#include "bifrn/params.hpp"
#include "bifrn/tensor.hpp"

namespace bifrn {

struct FmrmConfig {
  std::size_t d = 64;
  /// Gives the support-reconstruction direction its own projection weights.
  /// Off by default: both directions share one W^Q, W^K, W^V.
  bool separate_direction_weights = false;
};

template <typename T>
struct Projection {
  Tensor<T> wq, wk, wv;  // d x d
};

template <typename T>
struct FmrmParams {
  Projection<T> shared;
  Projection<T> support_direction;  // only when separate_direction_weights
  bool separate = false;

  static FmrmParams init(const FmrmConfig& config, Rng& rng);
  ParamList<T> parameters() const;

  /// Weights used when reconstructing a query from class supports.
  const Projection<T>& query_reconstruction() const { return shared; }
  /// Weights used when reconstructing class supports from a query.
  const Projection<T>& support_reconstruction() const { return separate ? support_direction : shared; }
};

template <typename T>
struct Projected {
  Tensor<T> q, k, v;
};

/// rows [n, d] -> (rows Wq, rows Wk, rows Wv).
template <typename T>
Projected<T> project(const Tensor<T>& rows, const Projection<T>& w);

/// Softmax(q k^T / sqrt(d)) for q [m, d], k [n, d]; result [m, n].
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k);

/// attention_weights(q, k) v. Output rows depend only on their own query row.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v);

/// Reconstruct one query's r rows from a class's K*r support rows.
template <typename T>
Tensor<T> reconstruct_query(const Tensor<T>& query_rows, const Tensor<T>& support_rows, const FmrmParams<T>& p);

/// Reconstruct a class's K*r support rows from one query's r rows.
template <typename T>
Tensor<T> reconstruct_support(const Tensor<T>& support_rows, const Tensor<T>& query_rows, const FmrmParams<T>& p);

}  // namespace bifrn
