#include "bifrn/backbone.hpp"

#include <cmath>

#include "bifrn/errors.hpp"
#include "bifrn/ops.hpp"

namespace bifrn {

namespace {
constexpr double kBnMomentum = 0.1;
constexpr double kBnEps = 1e-5;
}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::base: return "base";
    case Split::val: return "val";
    case Split::novel: return "novel";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "base") return Split::base;
  if (text == "val") return Split::val;
  if (text == "novel") return Split::novel;
  throw ContractError("unknown split '" + std::string(text) + "'");
}

std::string_view backbone_name(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::bypass: return "bypass";
    case BackboneKind::conv4: return "conv4";
    case BackboneKind::resnet: return "resnet";
  }
  return "?";
}

BackboneKind parse_backbone(std::string_view text) {
  if (text == "bypass") return BackboneKind::bypass;
  if (text == "conv4") return BackboneKind::conv4;
  if (text == "resnet") return BackboneKind::resnet;
  throw ContractError("unknown backbone '" + std::string(text) + "'");
}

template <typename T>
Tensor<T> reshape_local_features(const FeatureMap<T>& f) {
  return ops::to_local_rows(ops::reshape(f.values, Shape{1, f.d, f.h, f.w}));
}

template <typename T>
FeatureMap<T> local_features_to_map(const Tensor<T>& rows, std::size_t h, std::size_t w) {
  if (rows.rank() != 2 || rows.dim(0) != h * w) {
    throw DimensionError("local_features_to_map: expected " + std::to_string(h * w) + " rows, got " +
                         shape_str(rows.shape()));
  }
  const std::size_t d = rows.dim(1);
  return FeatureMap<T>{d, h, w, ops::reshape(ops::from_local_rows(rows, h, w), Shape{d, h, w})};
}

template <typename T>
Tensor<T> Backbone<T>::ConvBn::apply(const Tensor<T>& x, bool training) {
  auto y = ops::conv2d(x, weight, bias, pad);
  return ops::batch_norm2d(y, gain, shift, running_mean, running_var, training, static_cast<T>(kBnMomentum),
                           static_cast<T>(kBnEps));
}

template <typename T>
typename Backbone<T>::ConvBn Backbone<T>::make_conv(std::string name, std::size_t in, std::size_t out,
                                                    std::size_t k, Rng& rng) {
  ConvBn c;
  c.name = std::move(name);
  c.pad = k / 2;
  c.weight = normal_tensor<T>(Shape{out, in, k, k}, std::sqrt(2.0 / static_cast<double>(in * k * k)), rng);
  c.bias = Tensor<T>::zeros(Shape{out}, true);
  c.gain = Tensor<T>::full(Shape{out}, T{1}, true);
  c.shift = Tensor<T>::zeros(Shape{out}, true);
  c.running_mean = Tensor<T>::zeros(Shape{out});
  c.running_var = Tensor<T>::full(Shape{out}, T{1});
  return c;
}

template <typename T>
Backbone<T>::Backbone(BackboneConfig config, Rng& rng) : config_(config) {
  const std::size_t d = config_.channels;
  std::size_t side = config_.image_size;
  switch (config_.kind) {
    case BackboneKind::bypass:
      throw ContractError("bypass mode has no backbone network");
    case BackboneKind::conv4: {
      std::size_t in = config_.in_channels;
      for (int b = 0; b < 4; ++b) {
        layers_.push_back(make_conv("backbone.block" + std::to_string(b), in, d, 3, rng));
        in = d;
        side /= 2;
      }
      break;
    }
    case BackboneKind::resnet: {
      if (d % 4 != 0) throw ContractError("resnet backbone needs channels divisible by 4");
      std::size_t in = config_.in_channels;
      const std::size_t widths[3] = {d / 4, d / 2, d};
      for (int s = 0; s < 3; ++s) {
        const std::string p = "backbone.stage" + std::to_string(s);
        layers_.push_back(make_conv(p + ".conv1", in, widths[s], 3, rng));
        layers_.push_back(make_conv(p + ".conv2", widths[s], widths[s], 3, rng));
        layers_.push_back(make_conv(p + ".shortcut", in, widths[s], 1, rng));
        in = widths[s];
        side /= 2;
      }
      break;
    }
  }
  if (side == 0) throw ContractError("image_size too small for the backbone's pooling schedule");
  out_side_ = side;
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& images, bool training) {
  if (images.rank() != 4 || images.dim(1) != config_.in_channels || images.dim(2) != config_.image_size ||
      images.dim(3) != config_.image_size) {
    throw ConfigError("model.image_size", 0,
                      "backbone expects [N, " + std::to_string(config_.in_channels) + ", " +
                          std::to_string(config_.image_size) + ", " + std::to_string(config_.image_size) +
                          "] input, got " + shape_str(images.shape()));
  }
  Tensor<T> x = images;
  if (config_.kind == BackboneKind::conv4) {
    for (auto& layer : layers_) x = ops::max_pool2d(ops::relu(layer.apply(x, training)), 2);
    return x;
  }
  for (std::size_t s = 0; s < layers_.size(); s += 3) {
    auto a = ops::relu(layers_[s].apply(x, training));
    auto b = layers_[s + 1].apply(a, training);
    auto shortcut = layers_[s + 2].apply(x, training);
    x = ops::max_pool2d(ops::relu(ops::add(b, shortcut)), 2);
  }
  return x;
}

template <typename T>
FeatureMap<T> Backbone<T>::embed(const Image& image) {
  if (image.channels != config_.in_channels || image.height != config_.image_size ||
      image.width != config_.image_size) {
    throw ConfigError("model.image_size", 0,
                      "image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                          ", backbone expects " + std::to_string(config_.image_size));
  }
  std::vector<T> px(image.pixels.begin(), image.pixels.end());
  Tensor<T> x(Shape{1, image.channels, image.height, image.width}, std::move(px));
  auto y = forward(x, false);
  const std::size_t d = y.dim(1), h = y.dim(2), w = y.dim(3);
  return FeatureMap<T>{d, h, w, ops::reshape(y, Shape{d, h, w})};
}

template <typename T>
ParamList<T> Backbone<T>::parameters() const {
  ParamList<T> out;
  for (const auto& l : layers_) {
    out.push_back({l.name + ".conv.weight", l.weight, true});
    out.push_back({l.name + ".conv.bias", l.bias, true});
    out.push_back({l.name + ".bn.gain", l.gain, true});
    out.push_back({l.name + ".bn.bias", l.shift, true});
    out.push_back({l.name + ".bn.running_mean", l.running_mean, false});
    out.push_back({l.name + ".bn.running_var", l.running_var, false});
  }
  return out;
}

template Tensor<float> reshape_local_features(const FeatureMap<float>&);
template Tensor<double> reshape_local_features(const FeatureMap<double>&);
template FeatureMap<float> local_features_to_map(const Tensor<float>&, std::size_t, std::size_t);
template FeatureMap<double> local_features_to_map(const Tensor<double>&, std::size_t, std::size_t);
template class Backbone<float>;
template class Backbone<double>;

}  // namespace bifrn
