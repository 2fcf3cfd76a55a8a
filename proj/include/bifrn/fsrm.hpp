#pragma once

#include <cstddef>

#include "bifrn/params.hpp"
#include "bifrn/tensor.hpp"

namespace bifrn {

/// Sinusoidal position table, r x d. Column 2i holds sin(pos / 10000^(2i/d)),
/// column 2i+1 holds cos of the same angle.
template <typename T>
Tensor<T> positional_encoding(std::size_t r, std::size_t d);

struct FsrmConfig {
  std::size_t d = 64;
  std::size_t d_mlp = 0;  // 0 means d
  /// Adds the conventional second residual + LN around the MLP. Off by
  /// default: the module output is exactly MLP(LN(z + attention(z))).
  bool transformer_standard_block = false;
};

template <typename T>
struct FsrmParams {
  Tensor<T> wq, wk, wv;            // d x d
  Tensor<T> ln_gain, ln_bias;      // d
  Tensor<T> mlp_w1, mlp_b1;        // d x d_mlp, d_mlp
  Tensor<T> mlp_w2, mlp_b2;        // d_mlp x d, d
  Tensor<T> ln2_gain, ln2_bias;    // only used by the standard block

  static FsrmParams init(const FsrmConfig& config, Rng& rng);
  ParamList<T> parameters(const FsrmConfig& config) const;
};

/// x_rows [n*r, d] + pe tiled over the n samples.
template <typename T>
Tensor<T> add_position(const Tensor<T>& x_rows, const Tensor<T>& pe);

/// Softmax(zWq (zWk)^T / sqrt(d)) per sample; z is [n*r, d], result [n, r, r].
template <typename T>
Tensor<T> self_attention_weights(const Tensor<T>& z, const FsrmParams<T>& p, std::size_t r);

/// Per-sample single-head self-attention of z [n*r, d]; result [n*r, d].
template <typename T>
Tensor<T> self_attend(const Tensor<T>& z, const FsrmParams<T>& p, std::size_t r);

/// add_position -> self_attend -> residual -> LN -> MLP for n samples of r rows.
template <typename T>
Tensor<T> fsrm_forward(const Tensor<T>& x_rows, const Tensor<T>& pe, const FsrmParams<T>& p,
                       const FsrmConfig& config);

}  // namespace bifrn
