#include <gtest/gtest.h>

#include "bifrn/backbone.hpp"
#include "bifrn/ops.hpp"
#include "test_util.hpp"

using namespace bifrn;

namespace {

Image random_image(std::size_t size, Rng& rng) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Image img{3, size, size, std::vector<float>(3 * size * size), 0, Split::base};
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

}  // namespace

TEST(Backbone, Conv4At32GivesFourLocalFeatures) {
  Rng rng(1);
  Backbone<float> net({BackboneKind::conv4, 3, 32, 64}, rng);
  Rng data(2);
  auto f = net.embed(random_image(32, data));
  EXPECT_EQ(f.d, 64u);
  EXPECT_EQ(f.h, 2u);
  EXPECT_EQ(f.w, 2u);
  EXPECT_EQ(f.r(), 4u);
  EXPECT_EQ(reshape_local_features(f).shape(), (Shape{4, 64}));
}

TEST(Backbone, Conv4At84GivesTwentyFiveLocalFeatures) {
  Rng rng(1);
  Backbone<float> net({BackboneKind::conv4, 3, 84, 8}, rng);
  EXPECT_EQ(net.out_height(), 5u);
  EXPECT_EQ(net.out_width(), 5u);
  Rng data(2);
  EXPECT_EQ(net.embed(random_image(84, data)).r(), 25u);
}

TEST(Backbone, ResnetShapeDependsOnlyOnConfig) {
  Rng rng(1);
  Backbone<float> net({BackboneKind::resnet, 3, 32, 16}, rng);
  Rng data(2);
  auto a = net.embed(random_image(32, data));
  auto b = net.embed(Image{3, 32, 32, std::vector<float>(3 * 32 * 32, 0.f), 0, Split::base});
  EXPECT_EQ(a.values.shape(), (Shape{16, 4, 4}));
  EXPECT_EQ(b.values.shape(), a.values.shape());
}

TEST(Backbone, ZeroImageWithZeroBiasesGivesZeroMap) {
  for (auto kind : {BackboneKind::conv4, BackboneKind::resnet}) {
    Rng rng(4);
    Backbone<double> net({kind, 3, 32, 16}, rng);
    for (auto& p : net.parameters()) {
      if (p.name.ends_with("bias") || p.name.ends_with("running_mean")) {
        for (auto& v : p.tensor.mutable_values()) v = 0;
      }
    }
    auto f = net.embed(Image{3, 32, 32, std::vector<float>(3 * 32 * 32, 0.f), 0, Split::base});
    for (double v : f.values.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Backbone, EmbedIsDeterministic) {
  Rng a(7), b(7);
  Backbone<float> n1({BackboneKind::conv4, 3, 32, 16}, a);
  Backbone<float> n2({BackboneKind::conv4, 3, 32, 16}, b);
  Rng data(3);
  const auto img = random_image(32, data);
  auto f1 = n1.embed(img), f1_again = n1.embed(img), f2 = n2.embed(img);
  for (std::size_t i = 0; i < f1.values.numel(); ++i) {
    EXPECT_EQ(f1.values.at(i), f1_again.values.at(i));
    EXPECT_EQ(f1.values.at(i), f2.values.at(i));
  }
}

TEST(Backbone, WrongImageSizeIsConfigError) {
  Rng rng(1);
  Backbone<float> net({BackboneKind::conv4, 3, 32, 8}, rng);
  Rng data(2);
  try {
    net.embed(random_image(28, data));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "model.image_size");
  }
  EXPECT_THROW(net.forward(Tensor<float>::zeros({1, 1, 32, 32}), false), ConfigError);
}

TEST(Backbone, ConvWeightGradientsMatchFiniteDifferences) {
  Rng rng(5);
  Backbone<double> net({BackboneKind::conv4, 3, 16, 4}, rng);
  // Move the running statistics off their defaults so eval mode is not trivial.
  for (auto& p : net.parameters()) {
    if (p.name.ends_with("running_mean")) for (auto& v : p.tensor.mutable_values()) v = 0.05;
    if (p.name.ends_with("running_var")) for (auto& v : p.tensor.mutable_values()) v = 0.5;
  }
  Rng data(6);
  auto x = testutil::random_tensor<double>({2, 3, 16, 16}, data, 1.0, false);
  auto w = testutil::random_tensor<double>({2, 4, 1, 1}, data, 1.0, false);
  std::vector<Tensor<double>> weights;
  for (auto& p : net.parameters()) {
    if (p.name.ends_with("conv.weight")) weights.push_back(p.tensor);
  }
  ASSERT_EQ(weights.size(), 4u);
  const double err = testutil::fd_error([&] { return ops::sum(ops::mul(net.forward(x, false), w)); }, weights);
  EXPECT_LT(err, 1e-4);
}

TEST(LocalFeatures, RowsFollowRowMajorPositions) {
  // Channel 0 holds [a, b], channel 1 holds [c, d] over a 1 x 2 grid.
  const double a = 1, b = 2, c = 3, d = 4;
  FeatureMap<double> f{2, 1, 2, Tensor<double>({2, 1, 2}, {a, b, c, d})};
  auto rows = reshape_local_features(f);
  ASSERT_EQ(rows.shape(), (Shape{2, 2}));
  EXPECT_EQ(rows.at(0, 0), a);
  EXPECT_EQ(rows.at(0, 1), c);
  EXPECT_EQ(rows.at(1, 0), b);
  EXPECT_EQ(rows.at(1, 1), d);
}

TEST(LocalFeatures, RoundTripAndIndexOracle) {
  Rng rng(8);
  const std::size_t d = 5, h = 3, w = 4;
  FeatureMap<double> f{d, h, w, testutil::random_tensor<double>({d, h, w}, rng, 1.0, false)};
  auto rows = reshape_local_features(f);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < d; ++ch) EXPECT_EQ(rows.at(y * w + x, ch), f.values.at((ch * h + y) * w + x));
  auto back = local_features_to_map(rows, h, w);
  EXPECT_EQ(back.d, d);
  for (std::size_t i = 0; i < f.values.numel(); ++i) EXPECT_EQ(back.values.at(i), f.values.at(i));
  EXPECT_THROW(local_features_to_map(rows, 2, 2), DimensionError);
}

TEST(LocalFeatures, BatchLayoutMatchesPerImageLayout) {
  Rng rng(9);
  auto x = testutil::random_tensor<double>({3, 4, 2, 2}, rng, 1.0, false);
  auto rows = ops::to_local_rows(x);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t ch = 0; ch < 4; ++ch) EXPECT_EQ(rows.at(n * 4 + j, ch), x.at((n * 4 + ch) * 4 + j));
}
