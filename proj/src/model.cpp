#include "bifrn/model.hpp"

#include "bifrn/errors.hpp"
#include "bifrn/ops.hpp"
#include "bifrn/rng.hpp"

namespace bifrn {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::fsrm_only: return "fsrm_only";
    case Variant::fmrm_only: return "fmrm_only";
    case Variant::q_to_s_only: return "q_to_s_only";
    case Variant::s_to_q_only: return "s_to_q_only";
    case Variant::protonet_baseline: return "protonet_baseline";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : all_variants()) {
    if (variant_name(v) == text) return v;
  }
  throw ContractError("unknown variant '" + std::string(text) + "'");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> order{Variant::protonet_baseline, Variant::fsrm_only,   Variant::fmrm_only,
                                          Variant::q_to_s_only,       Variant::s_to_q_only, Variant::full};
  return order;
}

bool ModelConfig::uses_fsrm() const {
  return variant != Variant::fmrm_only && variant != Variant::protonet_baseline;
}

bool ModelConfig::uses_fmrm() const {
  return variant != Variant::fsrm_only && variant != Variant::protonet_baseline;
}

bool ModelConfig::uses_q_to_s() const { return uses_fmrm() && variant != Variant::s_to_q_only; }
bool ModelConfig::uses_s_to_q() const { return uses_fmrm() && variant != Variant::q_to_s_only; }

template <typename T>
Model<T>::Model(ModelConfig config, std::uint64_t seed) : config_(config) {
  if (config_.channels < 2) throw ContractError("model.channels must be >= 2");
  Rng rng = make_rng(seed, "init");
  if (config_.backbone == BackboneKind::bypass) {
    if (config_.feature_rows == 0) throw ContractError("model.feature_rows must be >= 1");
    r_ = config_.feature_rows;
  } else {
    backbone_.emplace(BackboneConfig{config_.backbone, config_.in_channels, config_.image_size, config_.channels}, rng);
    r_ = backbone_->out_height() * backbone_->out_width();
  }
  fsrm_config_ = FsrmConfig{config_.channels, config_.d_mlp, config_.transformer_standard_block};
  fsrm_ = FsrmParams<T>::init(fsrm_config_, rng);
  fmrm_ = FmrmParams<T>::init(FmrmConfig{config_.channels, config_.separate_fmrm_weights}, rng);
  metric_ = MetricParams<T>::init();
  if (config_.variant == Variant::q_to_s_only) metric_.lambda2.mutable_values()[0] = T{0};
  if (config_.variant == Variant::s_to_q_only) metric_.lambda1.mutable_values()[0] = T{0};
  pe_ = positional_encoding<T>(r_, config_.channels);
}

template <typename T>
Tensor<T> Model<T>::embed_rows(const Tensor<T>& inputs, bool training) {
  if (!backbone_) {
    if (inputs.rank() != 2 || inputs.dim(1) != config_.channels || inputs.dim(0) % r_ != 0) {
      throw DimensionError("bypass input must be [N*" + std::to_string(r_) + ", " + std::to_string(config_.channels) +
                           "], got " + shape_str(inputs.shape()));
    }
    return inputs;
  }
  return ops::to_local_rows(backbone_->forward(inputs, training));
}

template <typename T>
Tensor<T> Model<T>::self_reconstruct(const Tensor<T>& rows) {
  if (!config_.uses_fsrm()) return rows;
  return fsrm_forward(rows, pe_, fsrm_, fsrm_config_);
}

template <typename T>
typename Model<T>::DirectionalDistances Model<T>::directional_distances(const Tensor<T>& rows, std::size_t way,
                                                                        std::size_t shot) const {
  const std::size_t r = r_, d = config_.channels;
  const std::size_t support_rows = way * shot * r;
  if (rows.dim(0) <= support_rows || (rows.dim(0) - support_rows) % r != 0) {
    throw DimensionError("episode rows do not split into " + std::to_string(way * shot) + " supports plus queries");
  }
  const std::size_t nq = (rows.dim(0) - support_rows) / r;
  auto support = ops::slice_rows(rows, 0, support_rows);
  auto query = ops::slice_rows(rows, support_rows, nq * r);
  const bool norm = config_.normalize_distances;

  Tensor<T> d_qs = Tensor<T>::zeros(Shape{nq, way});
  Tensor<T> d_sq = Tensor<T>::zeros(Shape{nq, way});

  if (config_.uses_q_to_s()) {
    const auto& w = fmrm_.query_reconstruction();
    auto qq = ops::matmul(query, w.wq);
    auto qv = ops::matmul(query, w.wv);
    auto sk = ops::matmul(support, w.wk);
    auto sv = ops::matmul(support, w.wv);
    std::vector<Tensor<T>> per_class;
    for (std::size_t c = 0; c < way; ++c) {
      auto k = ops::slice_rows(sk, c * shot * r, shot * r);
      auto v = ops::slice_rows(sv, c * shot * r, shot * r);
      // Rows of qq attend independently, so all queries share one call.
      auto recon = attention(qq, k, v);
      auto diff = ops::sub(qv, recon);
      auto dist = ops::block_sum(ops::mul(diff, diff), r);
      per_class.push_back(norm ? ops::scale(dist, T{1} / static_cast<T>(r * d)) : dist);
    }
    d_qs = ops::transpose(ops::stack_rows(per_class));
  }

  if (config_.uses_s_to_q()) {
    const auto& w = fmrm_.support_reconstruction();
    auto sq = ops::matmul(support, w.wq);
    auto sv = ops::matmul(support, w.wv);
    auto qk = ops::matmul(query, w.wk);
    auto qv = ops::matmul(query, w.wv);
    std::vector<Tensor<T>> per_query;
    for (std::size_t i = 0; i < nq; ++i) {
      auto k = ops::slice_rows(qk, i * r, r);
      auto v = ops::slice_rows(qv, i * r, r);
      // Every class's support rows attend to query i in one call.
      auto recon = attention(sq, k, v);
      auto diff = ops::sub(sv, recon);
      auto dist = ops::block_sum(ops::mul(diff, diff), shot * r);
      per_query.push_back(norm ? ops::scale(dist, T{1} / static_cast<T>(shot * r * d)) : dist);
    }
    d_sq = ops::stack_rows(per_query);
  }
  return {d_qs, d_sq};
}

template <typename T>
Tensor<T> Model<T>::prototype_distances(const Tensor<T>& rows, std::size_t way, std::size_t shot) const {
  const std::size_t flat = r_ * config_.channels;
  const std::size_t n = rows.dim(0) / r_;
  auto samples = ops::reshape(rows, Shape{n, flat});
  auto protos = ops::mean_row_blocks(ops::slice_rows(samples, 0, way * shot), shot);
  auto queries = ops::slice_rows(samples, way * shot, n - way * shot);
  auto d = ops::pairwise_sq_dist(queries, protos);
  if (config_.normalize_distances) d = ops::scale(d, T{1} / static_cast<T>(flat));
  return ops::mul_scalar(d, ops::exp(metric_.log_tau));
}

template <typename T>
Tensor<T> Model<T>::distances_from_rows(const Tensor<T>& rows, std::size_t way, std::size_t shot) const {
  if (!config_.uses_fmrm()) return prototype_distances(rows, way, shot);
  auto dd = directional_distances(rows, way, shot);
  return fuse(dd.q_to_s, dd.s_to_q, metric_);
}

template <typename T>
Tensor<T> Model<T>::distances(const EpisodeBatch<T>& batch, bool training) {
  auto rows = self_reconstruct(embed_rows(batch.inputs, training));
  auto d = distances_from_rows(rows, batch.way, batch.shot);
  if (d.dim(0) != batch.query_count()) {
    throw DimensionError("episode has " + std::to_string(d.dim(0)) + " queries but " +
                         std::to_string(batch.query_count()) + " labels");
  }
  return d;
}

template <typename T>
Tensor<T> Model<T>::loss(const EpisodeBatch<T>& batch, bool training) {
  return episode_loss(distances(batch, training), batch.query_labels);
}

template <typename T>
ParamList<T> Model<T>::parameters() const {
  ParamList<T> out;
  if (backbone_) out = backbone_->parameters();
  if (config_.uses_fsrm()) {
    auto p = fsrm_.parameters(fsrm_config_);
    out.insert(out.end(), p.begin(), p.end());
  }
  if (config_.uses_fmrm()) {
    auto p = fmrm_.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  // The prototype variants have no lambdas in their distance.
  const bool l1 = config_.uses_q_to_s();
  const bool l2 = config_.uses_s_to_q();
  auto m = metric_.parameters(l1, l2);
  out.insert(out.end(), m.begin(), m.end());
  return out;
}

template <typename T>
Checkpoint Model<T>::to_checkpoint() const {
  Checkpoint ck;
  for (const auto& p : parameters()) ck.add(CheckpointRecord::from_tensor(p.name, p.tensor));
  return ck;
}

template <typename T>
void Model<T>::load_checkpoint(const Checkpoint& checkpoint) {
  for (auto& p : parameters()) {
    const CheckpointRecord* rec = checkpoint.find(p.name);
    if (!rec) throw IoError("checkpoint is missing record '" + p.name + "'");
    if (rec->shape != p.tensor.shape()) {
      throw IoError("checkpoint record '" + p.name + "' has shape " + shape_str(rec->shape) + ", model expects " +
                    shape_str(p.tensor.shape()));
    }
    auto loaded = rec->to_tensor<T>();
    auto dst = p.tensor.mutable_values();
    std::copy(loaded.values().begin(), loaded.values().end(), dst.begin());
  }
}

template class Model<float>;
template class Model<double>;

}  // namespace bifrn
