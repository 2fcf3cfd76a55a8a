#include "bifrn/metric.hpp"

#include <cmath>

#include "bifrn/errors.hpp"
#include "bifrn/ops.hpp"

namespace bifrn {

template <typename T>
MetricParams<T> MetricParams<T>::init() {
  return MetricParams{Tensor<T>::scalar(T(0.5), true), Tensor<T>::scalar(T(0.5), true), Tensor<T>::scalar(T(0), true)};
}

template <typename T>
T MetricParams<T>::tau() const {
  return std::exp(log_tau.item());
}

template <typename T>
ParamList<T> MetricParams<T>::parameters(bool train_lambda1, bool train_lambda2) const {
  return {{"metric.lambda1", lambda1, train_lambda1},
          {"metric.lambda2", lambda2, train_lambda2},
          {"metric.log_tau", log_tau, true}};
}

namespace {

template <typename T>
Tensor<T> squared_distance(const char* op, const Tensor<T>& a, const Tensor<T>& b, bool normalize) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto d = ops::sq_l2(ops::sub(a, b));
  return normalize ? ops::scale(d, T{1} / static_cast<T>(a.numel())) : d;
}

}  // namespace

template <typename T>
Tensor<T> dist_q_to_s(const Tensor<T>& query_v, const Tensor<T>& query_hat, bool normalize) {
  return squared_distance("dist_q_to_s", query_v, query_hat, normalize);
}

template <typename T>
Tensor<T> dist_s_to_q(const Tensor<T>& support_v, const Tensor<T>& support_hat, bool normalize) {
  return squared_distance("dist_s_to_q", support_v, support_hat, normalize);
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& d_qs, const Tensor<T>& d_sq, const MetricParams<T>& m) {
  auto weighted = ops::add(ops::mul_scalar(d_qs, m.lambda1), ops::mul_scalar(d_sq, m.lambda2));
  return ops::mul_scalar(weighted, ops::exp(m.log_tau));
}

template <typename T>
Tensor<T> normalize_distances(const Tensor<T>& distances) {
  return ops::softmax_rows(ops::scale(distances, T{-1}));
}

template <typename T>
Tensor<T> episode_loss(const Tensor<T>& distances, const std::vector<std::size_t>& labels) {
  if (distances.rank() != 2) throw DimensionError("episode_loss: expected a [queries, classes] table");
  return ops::nll(ops::log_softmax_rows(ops::scale(distances, T{-1})), labels);
}

template <typename T>
std::vector<std::size_t> predict(const Tensor<T>& normalized) {
  if (normalized.rank() != 2) throw DimensionError("predict: expected a [queries, classes] table");
  const std::size_t n = normalized.dim(0), c = normalized.dim(1);
  auto v = normalized.values();
  std::vector<std::size_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 1; j < c; ++j) {
      if (v[i * c + j] > v[i * c + out[i]]) out[i] = j;
    }
  }
  return out;
}

template <typename T>
DistanceTable<T> DistanceTable<T>::from_distances(Tensor<T> d) {
  auto normalized = normalize_distances(d);
  return DistanceTable{std::move(d), std::move(normalized)};
}

#define BIFRN_INSTANTIATE_METRIC(T)                                                             \
  template struct MetricParams<T>;                                                              \
  template struct DistanceTable<T>;                                                             \
  template Tensor<T> dist_q_to_s(const Tensor<T>&, const Tensor<T>&, bool);                     \
  template Tensor<T> dist_s_to_q(const Tensor<T>&, const Tensor<T>&, bool);                     \
  template Tensor<T> fuse(const Tensor<T>&, const Tensor<T>&, const MetricParams<T>&);          \
  template Tensor<T> normalize_distances(const Tensor<T>&);                                     \
  template Tensor<T> episode_loss(const Tensor<T>&, const std::vector<std::size_t>&);           \
  template std::vector<std::size_t> predict(const Tensor<T>&);

BIFRN_INSTANTIATE_METRIC(float)
BIFRN_INSTANTIATE_METRIC(double)

}  // namespace bifrn
