#include <gtest/gtest.h>

#include <cmath>

#include "bifrn/metric.hpp"
#include "bifrn/model.hpp"
#include "bifrn/ops.hpp"
#include "bridge.hpp"
#include "test_util.hpp"

using namespace bifrn;
using testutil::random_tensor;

namespace {

using TD = Tensor<double>;

MetricParams<double> metric(double l1, double l2, double tau) {
  auto m = MetricParams<double>::init();
  m.lambda1.mutable_values()[0] = l1;
  m.lambda2.mutable_values()[0] = l2;
  m.log_tau.mutable_values()[0] = std::log(tau);
  return m;
}

TD row(std::vector<double> v) {
  const std::size_t n = v.size();
  return TD({1, n}, std::move(v));
}

}  // namespace

TEST(Distances, IdenticalInputsGiveZero) {
  Rng rng(1);
  auto a = random_tensor<double>({4, 3}, rng, 1.0, false);
  EXPECT_EQ(dist_q_to_s(a, a, true).item(), 0.0);
  EXPECT_EQ(dist_s_to_q(a, a, false).item(), 0.0);
}

TEST(Distances, AllOnesDifference) {
  const std::size_t r = 4, d = 3, k = 2;
  EXPECT_EQ(dist_q_to_s(TD::full({r, d}, 1.0), TD::zeros({r, d}), false).item(), static_cast<double>(r * d));
  EXPECT_EQ(dist_q_to_s(TD::full({r, d}, 1.0), TD::zeros({r, d}), true).item(), 1.0);
  EXPECT_EQ(dist_s_to_q(TD::full({k * r, d}, 2.0), TD::full({k * r, d}, 1.0), true).item(), 1.0);
  EXPECT_EQ(dist_s_to_q(TD::full({k * r, d}, 2.0), TD::full({k * r, d}, 1.0), false).item(), static_cast<double>(k * r * d));
}

TEST(Distances, RandomPairMatchesElementwiseSum) {
  Rng rng(2);
  auto a = random_tensor<double>({6, 5}, rng, 1.0, false);
  auto b = random_tensor<double>({6, 5}, rng, 1.0, false);
  const auto want = oracle::sq_norm_diff(oracle::from(a), oracle::from(b));
  EXPECT_NEAR(dist_q_to_s(a, b, false).item(), static_cast<double>(want), 1e-12);
  EXPECT_NEAR(dist_s_to_q(a, b, true).item(), static_cast<double>(want / 30), 1e-12);
  EXPECT_THROW(dist_q_to_s(a, TD::zeros({5, 6}), true), DimensionError);
}

TEST(Fuse, InitialWeightsAverage) {
  auto m = MetricParams<double>::init();
  EXPECT_EQ(m.tau(), 1.0);
  EXPECT_EQ(fuse(row({2}), row({4}), m).item(), 3.0);
}

TEST(Fuse, SingleDirectionWhenOtherWeightIsZero) {
  Rng rng(3);
  auto a = random_tensor<double>({3, 4}, rng, 1.0, false);
  auto b = random_tensor<double>({3, 4}, rng, 1.0, false);
  auto only_a = fuse(a, b, metric(0.7, 0.0, 2.0));
  auto only_b = fuse(a, b, metric(0.0, 0.7, 2.0));
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_NEAR(only_a.at(i), 1.4 * a.at(i), 1e-14);
    EXPECT_NEAR(only_b.at(i), 1.4 * b.at(i), 1e-14);
  }
}

TEST(Fuse, LinearInEachArgument) {
  Rng rng(4);
  auto m = metric(0.3, -1.2, 1.7);
  auto a1 = random_tensor<double>({2, 5}, rng, 1.0, false), a2 = random_tensor<double>({2, 5}, rng, 1.0, false);
  auto b = random_tensor<double>({2, 5}, rng, 1.0, false);
  auto lhs = fuse(ops::add(ops::scale(a1, 2.0), ops::scale(a2, -3.0)), b, m);
  auto f1 = fuse(a1, b, m), f2 = fuse(a2, b, m), f0 = fuse(TD::zeros({2, 5}), b, m);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_NEAR(lhs.at(i), 2 * f1.at(i) - 3 * f2.at(i) + 2 * f0.at(i), 1e-12);
  }
}

TEST(Normalize, EqualDistancesAreUniform) {
  auto p = normalize_distances(row({1.5, 1.5, 1.5, 1.5, 1.5}));
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(p.at(j), 0.2, 1e-15);
}

TEST(Normalize, LargeGapSaturates) {
  auto p = normalize_distances(row({0, 50}));
  EXPECT_NEAR(p.at(0), 1.0, 1e-15);
  EXPECT_LT(p.at(1), 1e-20);
}

TEST(Normalize, RowsSumToOneAndMatchOracle) {
  Rng rng(5);
  auto d = random_tensor<double>({7, 5}, rng, 3.0, false);
  auto p = normalize_distances(d);
  EXPECT_LT(bridge::max_diff(p, oracle::normalized(oracle::from(d))), 1e-14);
  for (std::size_t i = 0; i < 7; ++i) {
    double total = 0;
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_GT(p.at(i, j), 0.0);
      EXPECT_LT(p.at(i, j), 1.0);
      total += p.at(i, j);
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Loss, UniformTableIsLogOfClassCount) {
  auto d = TD::full({15, 5}, 0.37);
  std::vector<std::size_t> labels(15);
  for (std::size_t i = 0; i < 15; ++i) labels[i] = i % 5;
  EXPECT_NEAR(episode_loss(d, labels).item(), std::log(5.0), 1e-9);
}

TEST(Loss, PerfectPredictionIsZero) {
  std::vector<double> v(5 * 5, 1e3);
  std::vector<std::size_t> labels(5);
  for (std::size_t i = 0; i < 5; ++i) {
    v[i * 5 + i] = 0;
    labels[i] = i;
  }
  const double loss = episode_loss(TD({5, 5}, v), labels).item();
  EXPECT_GE(loss, 0.0);
  EXPECT_NEAR(loss, 0.0, 1e-9);
}

TEST(Loss, RandomTableMatchesDirectSum) {
  Rng rng(6);
  auto d = random_tensor<double>({10, 4}, rng, 2.0, false);
  std::vector<std::size_t> labels{0, 1, 2, 3, 3, 2, 1, 0, 1, 2};
  const double got = episode_loss(d, labels).item();
  EXPECT_NEAR(got, static_cast<double>(oracle::loss(oracle::from(d), labels)), 1e-12);
  EXPECT_GT(got, 0.0);
}

TEST(Loss, BadLabelsAndShapesThrow) {
  EXPECT_THROW(episode_loss(TD::zeros({2, 3}), {0, 3}), ContractError);
  EXPECT_THROW(episode_loss(TD::zeros({2, 3}), {0}), ContractError);
  EXPECT_THROW(episode_loss(TD::zeros({6}), {0}), DimensionError);
}

TEST(Loss, GradientsReachMetricScalars) {
  Rng rng(7);
  auto m = metric(0.5, 0.5, 1.0);
  auto dqs = random_tensor<double>({6, 3}, rng);
  auto dsq = random_tensor<double>({6, 3}, rng);
  std::vector<std::size_t> labels{0, 1, 2, 0, 1, 2};
  const double err = testutil::fd_error([&] { return episode_loss(fuse(dqs, dsq, m), labels); },
                                        {dqs, dsq, m.lambda1, m.lambda2, m.log_tau});
  EXPECT_LT(err, 1e-6);
}

TEST(Predict, StrictMinimumWins) {
  EXPECT_EQ(predict(normalize_distances(row({3, 1, 2, 5, 4}))), (std::vector<std::size_t>{1}));
}

TEST(Predict, TieGoesToLowestIndex) {
  EXPECT_EQ(predict(normalize_distances(row({5, 5, 1, 5, 1}))), (std::vector<std::size_t>{2}));
}

TEST(Predict, AgreesWithArgminAndIgnoresTemperature) {
  Rng rng(8);
  auto dqs = random_tensor<double>({30, 5}, rng, 1.0, false);
  auto dsq = random_tensor<double>({30, 5}, rng, 1.0, false);
  const auto base = predict(normalize_distances(fuse(dqs, dsq, metric(0.5, 0.5, 1.0))));
  for (double tau : {0.01, 0.5, 3.0, 40.0}) {
    EXPECT_EQ(predict(normalize_distances(fuse(dqs, dsq, metric(0.5, 0.5, tau)))), base) << tau;
  }
  auto d = fuse(dqs, dsq, metric(0.5, 0.5, 1.0));
  for (std::size_t i = 0; i < 30; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < 5; ++j)
      if (d.at(i, j) < d.at(i, best)) best = j;
    EXPECT_EQ(base[i], best);
  }
  // A strictly increasing transform of each row keeps the argmax.
  EXPECT_EQ(predict(normalize_distances(ops::exp(d))), base);
}

TEST(DistanceTable, NormalizedRowsSumToOne) {
  Rng rng(9);
  auto t = DistanceTable<float>::from_distances(random_tensor<float>({8, 5}, rng, 4.0, false));
  EXPECT_EQ(t.queries(), 8u);
  EXPECT_EQ(t.classes(), 5u);
  for (std::size_t i = 0; i < 8; ++i) {
    double total = 0;
    for (std::size_t j = 0; j < 5; ++j) total += t.normalized.at(i, j);
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

// Model-level reductions and the fused table against the oracle.
namespace {

ModelConfig tiny(Variant v) {
  ModelConfig c;
  c.channels = 3;
  c.feature_rows = 3;
  c.variant = v;
  return c;
}

}  // namespace

TEST(ModelDistances, FusedTableMatchesOracle) {
  Model<double> model(tiny(Variant::fmrm_only), 3);
  model.metric().lambda1.mutable_values()[0] = 0.8;
  model.metric().lambda2.mutable_values()[0] = -0.3;
  model.metric().log_tau.mutable_values()[0] = 0.4;
  Rng rng(10);
  auto rows = random_tensor<double>({(3 * 2 + 5) * 3, 3}, rng, 1.0, false);
  auto d = model.distances_from_rows(rows, 3, 2);
  const auto w = bridge::proj(model.fmrm().shared);
  const auto want = oracle::fuse(oracle::directional(oracle::from(rows), 3, 2, 3, w, w, true),
                                 {0.8L, -0.3L, std::exp(0.4L)});
  EXPECT_LT(bridge::max_diff(d, want), 1e-10);
}

TEST(ModelDistances, ZeroWeightMatchesSingleDirectionVariant) {
  Rng rng(11);
  auto rows = random_tensor<double>({(3 * 2 + 4) * 3, 3}, rng, 1.0, false);
  Model<double> full(tiny(Variant::full), 5);
  Model<double> q_only(tiny(Variant::q_to_s_only), 5);
  Model<double> s_only(tiny(Variant::s_to_q_only), 5);
  auto post = full.self_reconstruct(rows);

  full.metric().lambda2.mutable_values()[0] = 0;
  auto a = full.distances_from_rows(post, 3, 2);
  auto b = q_only.distances_from_rows(q_only.self_reconstruct(rows), 3, 2);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));

  full.metric().lambda2.mutable_values()[0] = 0.5;
  full.metric().lambda1.mutable_values()[0] = 0;
  auto c = full.distances_from_rows(post, 3, 2);
  auto e = s_only.distances_from_rows(s_only.self_reconstruct(rows), 3, 2);
  for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_EQ(c.at(i), e.at(i));
}

TEST(ModelDistances, SingleDirectionVariantsFreezeTheirZeroWeight) {
  Model<double> q_only(tiny(Variant::q_to_s_only), 5);
  for (const auto& p : q_only.parameters()) {
    if (p.name == "metric.lambda2") {
      EXPECT_FALSE(p.trainable);
      EXPECT_EQ(p.tensor.item(), 0.0);
    }
    if (p.name == "metric.lambda1") EXPECT_TRUE(p.trainable);
  }
}

TEST(ModelDistances, PrototypeBaselineIsNearestMean) {
  Model<double> model(tiny(Variant::protonet_baseline), 6);
  Rng rng(12);
  const std::size_t way = 4, shot = 3, nq = 20, flat = 9;
  auto rows = random_tensor<double>({(way * shot + nq) * 3, 3}, rng, 1.0, false);
  auto got = predict(normalize_distances(model.distances_from_rows(model.self_reconstruct(rows), way, shot)));
  std::vector<std::vector<oracle::Real>> supports, queries;
  for (std::size_t n = 0; n < way * shot + nq; ++n) {
    std::vector<oracle::Real> v(rows.values().begin() + n * flat, rows.values().begin() + (n + 1) * flat);
    (n < way * shot ? supports : queries).push_back(v);
  }
  EXPECT_EQ(got, oracle::nearest_prototype(supports, queries, shot));
}

TEST(ModelDistances, EndToEndGradientsMatchFiniteDifferences) {
  for (Variant v : all_variants()) {
    ModelConfig c = tiny(v);
    c.channels = 4;
    c.feature_rows = 2;
    Model<double> model(c, 13);
    Rng rng(14);
    EpisodeBatch<double> batch{3, 2, random_tensor<double>({(3 * 2 + 6) * 2, 4}, rng, 1.0, false),
                               {0, 0, 1, 1, 2, 2}};
    std::vector<TD> params;
    for (auto& p : model.parameters()) if (p.trainable) params.push_back(p.tensor);
    const double err = testutil::fd_error([&] { return model.loss(batch, true); }, params);
    EXPECT_LT(err, 1e-3) << variant_name(v);
  }
}
