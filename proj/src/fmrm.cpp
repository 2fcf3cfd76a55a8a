#include "bifrn/fmrm.hpp"

#include <cmath>

#include "bifrn/errors.hpp"
#include "bifrn/ops.hpp"

namespace bifrn {

namespace {

template <typename T>
Projection<T> init_projection(std::size_t d, Rng& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  return Projection<T>{normal_tensor<T>(Shape{d, d}, sd, rng), normal_tensor<T>(Shape{d, d}, sd, rng),
                       normal_tensor<T>(Shape{d, d}, sd, rng)};
}

template <typename T>
void require_rows(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError(std::string(op) + ": incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
FmrmParams<T> FmrmParams<T>::init(const FmrmConfig& config, Rng& rng) {
  FmrmParams p;
  p.shared = init_projection<T>(config.d, rng);
  p.separate = config.separate_direction_weights;
  if (p.separate) p.support_direction = init_projection<T>(config.d, rng);
  return p;
}

template <typename T>
ParamList<T> FmrmParams<T>::parameters() const {
  ParamList<T> out{{"fmrm.wq", shared.wq, true}, {"fmrm.wk", shared.wk, true}, {"fmrm.wv", shared.wv, true}};
  if (separate) {
    out.push_back({"fmrm.support.wq", support_direction.wq, true});
    out.push_back({"fmrm.support.wk", support_direction.wk, true});
    out.push_back({"fmrm.support.wv", support_direction.wv, true});
  }
  return out;
}

template <typename T>
Projected<T> project(const Tensor<T>& rows, const Projection<T>& w) {
  return Projected<T>{ops::matmul(rows, w.wq), ops::matmul(rows, w.wk), ops::matmul(rows, w.wv)};
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k) {
  require_rows("attention", q, k);
  const T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.dim(1))));
  return ops::softmax_rows(ops::scale(ops::matmul(q, ops::transpose(k)), s));
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  return ops::matmul(attention_weights(q, k), v);
}

template <typename T>
Tensor<T> reconstruct_query(const Tensor<T>& query_rows, const Tensor<T>& support_rows, const FmrmParams<T>& p) {
  require_rows("reconstruct_query", query_rows, support_rows);
  const auto& w = p.query_reconstruction();
  auto qq = ops::matmul(query_rows, w.wq);
  auto sk = ops::matmul(support_rows, w.wk);
  auto sv = ops::matmul(support_rows, w.wv);
  return attention(qq, sk, sv);
}

template <typename T>
Tensor<T> reconstruct_support(const Tensor<T>& support_rows, const Tensor<T>& query_rows, const FmrmParams<T>& p) {
  require_rows("reconstruct_support", support_rows, query_rows);
  const auto& w = p.support_reconstruction();
  auto sq = ops::matmul(support_rows, w.wq);
  auto qk = ops::matmul(query_rows, w.wk);
  auto qv = ops::matmul(query_rows, w.wv);
  return attention(sq, qk, qv);
}

#define BIFRN_INSTANTIATE_FMRM(T)                                                                    \
  template struct FmrmParams<T>;                                                                     \
  template Projected<T> project(const Tensor<T>&, const Projection<T>&);                             \
  template Tensor<T> attention_weights(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> reconstruct_query(const Tensor<T>&, const Tensor<T>&, const FmrmParams<T>&);    \
  template Tensor<T> reconstruct_support(const Tensor<T>&, const Tensor<T>&, const FmrmParams<T>&);

BIFRN_INSTANTIATE_FMRM(float)
BIFRN_INSTANTIATE_FMRM(double)

}  // namespace bifrn
