#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "bifrn/params.hpp"
#include "bifrn/tensor.hpp"
#include "bifrn/types.hpp"

namespace bifrn {

enum class BackboneKind {
  bypass,  // inputs are already r x d local features
  conv4,   // 4 x (conv3x3 -> batch norm -> relu -> maxpool2)
  resnet,  // 3 residual stages, widths d/4, d/2, d
};

std::string_view backbone_name(BackboneKind kind);
BackboneKind parse_backbone(std::string_view text);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::conv4;
  std::size_t in_channels = 3;
  std::size_t image_size = 32;
  std::size_t channels = 64;  // d
};

/// Per-image embedding, d x h x w, values stored as [d, h, w].
template <typename T>
struct FeatureMap {
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  Tensor<T> values;

  std::size_t r() const { return h * w; }
};

/// Rows in row-major (h, w) order: row j is the d-vector at position j.
template <typename T>
Tensor<T> reshape_local_features(const FeatureMap<T>& f);
/// Inverse of reshape_local_features.
template <typename T>
FeatureMap<T> local_features_to_map(const Tensor<T>& rows, std::size_t h, std::size_t w);

template <typename T>
class Backbone {
 public:
  Backbone(BackboneConfig config, Rng& rng);

  const BackboneConfig& config() const { return config_; }
  std::size_t out_channels() const { return config_.channels; }
  std::size_t out_height() const { return out_side_; }
  std::size_t out_width() const { return out_side_; }

  /// [N, C, H, W] -> [N, d, h, w]. Training mode normalises with batch
  /// statistics and updates the running averages.
  Tensor<T> forward(const Tensor<T>& images, bool training);

  /// Single image in evaluation mode.
  FeatureMap<T> embed(const Image& image);

  ParamList<T> parameters() const;

 private:
  struct ConvBn {
    std::string name;
    std::size_t pad = 1;
    Tensor<T> weight, bias, gain, shift, running_mean, running_var;
    Tensor<T> apply(const Tensor<T>& x, bool training);
  };

  ConvBn make_conv(std::string name, std::size_t in, std::size_t out, std::size_t k, Rng& rng);

  BackboneConfig config_;
  std::size_t out_side_ = 0;
  std::vector<ConvBn> layers_;
};

extern template class Backbone<float>;
extern template class Backbone<double>;

}  // namespace bifrn
