#include "bifrn/fsrm.hpp"

#include <cmath>

#include "bifrn/errors.hpp"
#include "bifrn/ops.hpp"

namespace bifrn {

namespace {
constexpr double kLnEps = 1e-5;

std::size_t mlp_width(const FsrmConfig& c) { return c.d_mlp == 0 ? c.d : c.d_mlp; }
}  // namespace

template <typename T>
Tensor<T> positional_encoding(std::size_t r, std::size_t d) {
  std::vector<T> table(r * d);
  for (std::size_t pos = 0; pos < r; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, static_cast<double>(i - i % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) / freq;
      table[pos * d + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<T>(Shape{r, d}, std::move(table));
}

template <typename T>
FsrmParams<T> FsrmParams<T>::init(const FsrmConfig& config, Rng& rng) {
  const std::size_t d = config.d, h = mlp_width(config);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sh = 1.0 / std::sqrt(static_cast<double>(h));
  FsrmParams p;
  p.wq = normal_tensor<T>(Shape{d, d}, sd, rng);
  p.wk = normal_tensor<T>(Shape{d, d}, sd, rng);
  p.wv = normal_tensor<T>(Shape{d, d}, sd, rng);
  p.ln_gain = Tensor<T>::full(Shape{d}, T{1}, true);
  p.ln_bias = Tensor<T>::zeros(Shape{d}, true);
  p.mlp_w1 = normal_tensor<T>(Shape{d, h}, sd, rng);
  p.mlp_b1 = Tensor<T>::zeros(Shape{h}, true);
  p.mlp_w2 = normal_tensor<T>(Shape{h, d}, sh, rng);
  p.mlp_b2 = Tensor<T>::zeros(Shape{d}, true);
  p.ln2_gain = Tensor<T>::full(Shape{d}, T{1}, true);
  p.ln2_bias = Tensor<T>::zeros(Shape{d}, true);
  return p;
}

template <typename T>
ParamList<T> FsrmParams<T>::parameters(const FsrmConfig& config) const {
  ParamList<T> out{
      {"fsrm.wq", wq, true},           {"fsrm.wk", wk, true},           {"fsrm.wv", wv, true},
      {"fsrm.ln.gain", ln_gain, true}, {"fsrm.ln.bias", ln_bias, true}, {"fsrm.mlp.w1", mlp_w1, true},
      {"fsrm.mlp.b1", mlp_b1, true},   {"fsrm.mlp.w2", mlp_w2, true},   {"fsrm.mlp.b2", mlp_b2, true},
  };
  if (config.transformer_standard_block) {
    out.push_back({"fsrm.ln2.gain", ln2_gain, true});
    out.push_back({"fsrm.ln2.bias", ln2_bias, true});
  }
  return out;
}

template <typename T>
Tensor<T> add_position(const Tensor<T>& x_rows, const Tensor<T>& pe) {
  if (x_rows.rank() != 2 || pe.rank() != 2 || x_rows.dim(1) != pe.dim(1) || x_rows.dim(0) % pe.dim(0) != 0) {
    throw DimensionError("add_position: rows " + shape_str(x_rows.shape()) + " incompatible with table " +
                         shape_str(pe.shape()));
  }
  const std::size_t r = pe.dim(0), d = pe.dim(1), n = x_rows.dim(0) / r;
  return ops::reshape(ops::add_broadcast(ops::reshape(x_rows, Shape{n, r, d}), pe), Shape{n * r, d});
}

template <typename T>
Tensor<T> self_attention_weights(const Tensor<T>& z, const FsrmParams<T>& p, std::size_t r) {
  const std::size_t d = z.dim(1);
  if (r == 0 || z.dim(0) % r != 0) throw DimensionError("self_attend: row count not a multiple of r");
  const std::size_t n = z.dim(0) / r;
  auto q = ops::reshape(ops::matmul(z, p.wq), Shape{n, r, d});
  auto k = ops::reshape(ops::matmul(z, p.wk), Shape{n, r, d});
  auto logits = ops::scale(ops::bmm(q, ops::transpose_last2(k)), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  return ops::softmax_rows(logits);
}

template <typename T>
Tensor<T> self_attend(const Tensor<T>& z, const FsrmParams<T>& p, std::size_t r) {
  const std::size_t d = z.dim(1), n = z.dim(0) / r;
  auto weights = self_attention_weights(z, p, r);
  auto v = ops::reshape(ops::matmul(z, p.wv), Shape{n, r, d});
  return ops::reshape(ops::bmm(weights, v), Shape{n * r, d});
}

template <typename T>
Tensor<T> fsrm_forward(const Tensor<T>& x_rows, const Tensor<T>& pe, const FsrmParams<T>& p,
                       const FsrmConfig& config) {
  const std::size_t r = pe.dim(0);
  auto z = add_position(x_rows, pe);
  auto attended = self_attend(z, p, r);
  auto h = ops::layer_norm(ops::add(z, attended), p.ln_gain, p.ln_bias, static_cast<T>(kLnEps));
  auto hidden = ops::relu(ops::add_broadcast(ops::matmul(h, p.mlp_w1), p.mlp_b1));
  auto out = ops::add_broadcast(ops::matmul(hidden, p.mlp_w2), p.mlp_b2);
  if (config.transformer_standard_block) {
    out = ops::layer_norm(ops::add(h, out), p.ln2_gain, p.ln2_bias, static_cast<T>(kLnEps));
  }
  return out;
}

#define BIFRN_INSTANTIATE_FSRM(T)                                                                        \
  template Tensor<T> positional_encoding<T>(std::size_t, std::size_t);                                   \
  template struct FsrmParams<T>;                                                                         \
  template Tensor<T> add_position(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> self_attention_weights(const Tensor<T>&, const FsrmParams<T>&, std::size_t);        \
  template Tensor<T> self_attend(const Tensor<T>&, const FsrmParams<T>&, std::size_t);                   \
  template Tensor<T> fsrm_forward(const Tensor<T>&, const Tensor<T>&, const FsrmParams<T>&, const FsrmConfig&);

BIFRN_INSTANTIATE_FSRM(float)
BIFRN_INSTANTIATE_FSRM(double)

}  // namespace bifrn
