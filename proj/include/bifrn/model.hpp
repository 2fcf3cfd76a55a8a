#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "bifrn/backbone.hpp"
#include "bifrn/checkpoint.hpp"
#include "bifrn/fmrm.hpp"
#include "bifrn/fsrm.hpp"
#include "bifrn/metric.hpp"

namespace bifrn {

/// Ablation variants. q_to_s_only pins lambda2 = 0 and s_to_q_only pins
/// lambda1 = 0; the prototype variants replace FMRM by squared distance to
/// the mean support embedding.
enum class Variant { full, fsrm_only, fmrm_only, q_to_s_only, s_to_q_only, protonet_baseline };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view text);
/// Table row order: baseline, single modules, single directions, full.
const std::vector<Variant>& all_variants();

struct ModelConfig {
  BackboneKind backbone = BackboneKind::bypass;
  std::size_t in_channels = 3;
  std::size_t image_size = 32;
  std::size_t channels = 64;     // d
  std::size_t feature_rows = 4;  // r, bypass mode only
  std::size_t d_mlp = 0;         // 0 means d
  bool transformer_standard_block = false;
  bool separate_fmrm_weights = false;
  bool normalize_distances = true;
  Variant variant = Variant::full;

  bool uses_fsrm() const;
  bool uses_fmrm() const;
  bool uses_q_to_s() const;
  bool uses_s_to_q() const;
};

/// One episode's network input. Supports come first in class-major order
/// (`shot` consecutive samples per class), then the queries.
/// Bypass inputs are [N*r, d] rows; image inputs are [N, C, H, W].
template <typename T>
struct EpisodeBatch {
  std::size_t way = 0;
  std::size_t shot = 0;
  Tensor<T> inputs;
  std::vector<std::size_t> query_labels;  // 0-based local labels

  std::size_t support_count() const { return way * shot; }
  std::size_t query_count() const { return query_labels.size(); }
};

template <typename T>
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t r() const { return r_; }
  std::size_t d() const { return config_.channels; }
  const Tensor<T>& position_table() const { return pe_; }

  /// Backbone output as local feature rows, [N*r, d].
  Tensor<T> embed_rows(const Tensor<T>& inputs, bool training);
  /// FSRM output (identity when the variant drops FSRM), [N*r, d].
  Tensor<T> self_reconstruct(const Tensor<T>& rows);

  /// Unfused per-direction distances from post-FSRM rows; a direction the
  /// variant does not use is returned as zeros.
  struct DirectionalDistances {
    Tensor<T> q_to_s;  // [queries, way]
    Tensor<T> s_to_q;  // [queries, way]
  };
  DirectionalDistances directional_distances(const Tensor<T>& rows, std::size_t way, std::size_t shot) const;

  /// Fused distance table d_i^c for every query and class, [queries, way].
  Tensor<T> distances_from_rows(const Tensor<T>& rows, std::size_t way, std::size_t shot) const;
  Tensor<T> distances(const EpisodeBatch<T>& batch, bool training);
  Tensor<T> loss(const EpisodeBatch<T>& batch, bool training);

  FsrmParams<T>& fsrm() { return fsrm_; }
  FmrmParams<T>& fmrm() { return fmrm_; }
  MetricParams<T>& metric() { return metric_; }
  const FsrmConfig& fsrm_config() const { return fsrm_config_; }
  const FmrmParams<T>& fmrm() const { return fmrm_; }
  const MetricParams<T>& metric() const { return metric_; }
  Backbone<T>* backbone() { return backbone_ ? &*backbone_ : nullptr; }

  /// Every tensor the variant uses, including non-trainable buffers.
  ParamList<T> parameters() const;

  Checkpoint to_checkpoint() const;
  /// Copies values into the existing tensors; names and shapes must match.
  void load_checkpoint(const Checkpoint& checkpoint);

 private:
  Tensor<T> prototype_distances(const Tensor<T>& rows, std::size_t way, std::size_t shot) const;

  ModelConfig config_;
  std::size_t r_ = 0;
  std::optional<Backbone<T>> backbone_;
  FsrmConfig fsrm_config_;
  FsrmParams<T> fsrm_;
  FmrmParams<T> fmrm_;
  MetricParams<T> metric_;
  Tensor<T> pe_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace bifrn
