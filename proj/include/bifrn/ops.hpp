#pragma once

// Differentiable primitives. Every op checks its output for NaN/Inf and
// records a backward rule on the thread's tape when any input requires a
// gradient and recording is enabled.

#include <cstddef>
#include <vector>

#include "bifrn/tensor.hpp"

namespace bifrn::ops {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
/// a * s where s holds one element (a learnable scalar).
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s);
/// x + tile(y): y's shape must be a suffix of x's shape; y repeats over the
/// leading axes. Covers bias vectors and per-sample position tables.
template <typename T> Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& y);

template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// Matrix transpose.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
/// Swap the last two axes of a [B, m, n] tensor.
template <typename T> Tensor<T> transpose_last2(const Tensor<T>& a);

/// [m, k] x [k, n] -> [m, n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// [B, m, k] x [B, k, n] -> [B, m, n].
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);

/// Softmax over the last axis, stabilised by subtracting each row's max.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);
template <typename T> Tensor<T> log_softmax_rows(const Tensor<T>& x);

/// Per-row standardisation over the last axis followed by gain/bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// Sum of squares.
template <typename T> Tensor<T> sq_l2(const Tensor<T>& a);

/// [n, ...] -> [n / rows_per_block]: sum of every element in each group of
/// `rows_per_block` consecutive leading-axis slices.
template <typename T> Tensor<T> block_sum(const Tensor<T>& a, std::size_t rows_per_block);
/// [n, m] -> [n / rows_per_block, m]: average of consecutive row groups.
template <typename T> Tensor<T> mean_row_blocks(const Tensor<T>& a, std::size_t rows_per_block);
/// Rows [begin, begin + count) of the leading axis.
template <typename T> Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t count);
/// Stacks k equally sized tensors into [k, n].
template <typename T> Tensor<T> stack_rows(const std::vector<Tensor<T>>& parts);
/// [n, d] x [m, d] -> [n, m] squared Euclidean distances.
template <typename T> Tensor<T> pairwise_sq_dist(const Tensor<T>& a, const Tensor<T>& b);
/// Mean over rows of -logp[i, labels[i]].
template <typename T> Tensor<T> nll(const Tensor<T>& logp, const std::vector<std::size_t>& labels);

/// Stride-1 convolution. x: [N, Cin, H, W], weight: [Cout, Cin, k, k],
/// bias: [Cout]; zero padding `pad` on each side.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t pad);
/// Non-overlapping max pooling with window == stride == `window` (floor).
template <typename T> Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t window);

/// Per-channel normalisation of [N, C, H, W]. In training mode uses batch
/// statistics and updates the running buffers in place; otherwise uses the
/// running buffers as constants.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                       Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                       T momentum, T eps);

/// [N, d, h, w] -> [N*h*w, d]; row n*h*w + j is position j of sample n.
template <typename T> Tensor<T> to_local_rows(const Tensor<T>& x);
/// Inverse of to_local_rows.
template <typename T>
Tensor<T> from_local_rows(const Tensor<T>& rows, std::size_t h, std::size_t w);

}  // namespace bifrn::ops
