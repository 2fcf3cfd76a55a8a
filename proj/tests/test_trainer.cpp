#include <gtest/gtest.h>

#include <sstream>

#include "bifrn/eval.hpp"
#include "bifrn/ops.hpp"
#include "bifrn/trainer.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace bifrn;

namespace {

struct Problem {
  Dataset data;
  ClassSplits splits;
};

Problem small_problem(std::uint64_t seed) {
  SyntheticConfig c;
  c.classes = 20;
  c.samples_per_class = 12;
  c.rows = 4;
  c.width = 8;
  c.sigma_within = 0.3;
  c.seed = seed;
  Problem p{generate_synthetic(c), {}};
  p.splits = make_splits(20, {}, seed);
  return p;
}

ModelConfig small_model(Variant v = Variant::full) {
  ModelConfig m;
  m.channels = 8;
  m.feature_rows = 4;
  m.variant = v;
  return m;
}

TrainConfig short_run(std::uint64_t seed) {
  TrainConfig t;
  t.epochs = 4;
  t.episodes_per_epoch = 5;
  t.episode = {5, 2, 3, Split::base};
  t.lr = {0.05, 0.1, 3};
  t.eval_period = 2;
  t.val_episodes = 10;
  t.val_episode = {5, 1, 3, Split::val};
  t.seed = seed;
  return t;
}

}  // namespace

TEST(Sgd, NoMomentumNoDecayIsPlainGradientStep) {
  std::vector<double> p{1.0, -2.0, 0.5}, v(3, 0.0);
  const std::vector<double> g{0.3, 0.1, -0.4};
  sgd_nesterov_step<double>(p, g, v, {0.1, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 1.0 - 0.03);
  EXPECT_DOUBLE_EQ(p[1], -2.0 - 0.01);
  EXPECT_DOUBLE_EQ(p[2], 0.5 + 0.04);
}

TEST(Sgd, ZeroGradientZeroVelocityIsNoOp) {
  std::vector<double> p{1.0, -2.0}, v(2, 0.0);
  const std::vector<double> g(2, 0.0);
  sgd_nesterov_step<double>(p, g, v, {0.1, 0.9, 0.0});
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(v, (std::vector<double>{0.0, 0.0}));
}

TEST(Sgd, TwoStepsOnQuadraticMatchScalarOracle) {
  // f(p) = 0.5 * a * (p - c)^2.
  const double a = 3.0, c = 0.7;
  std::vector<double> p{-1.2}, v{0.0};
  oracle::ScalarSgd ref{-1.2L, 0.0L, 0.9L, 5e-4L};
  for (double lr : {0.1, 0.05}) {
    const std::vector<double> g{a * (p[0] - c)};
    sgd_nesterov_step<double>(p, g, v, {lr, 0.9, 5e-4});
    ref.step(a * (ref.p - c), lr);
  }
  EXPECT_NEAR(p[0], static_cast<double>(ref.p), 1e-12);
  EXPECT_NEAR(v[0], static_cast<double>(ref.v), 1e-12);
}

TEST(Sgd, SizeMismatchThrows) {
  std::vector<double> p(3), v(3);
  const std::vector<double> g(2);
  EXPECT_THROW(sgd_nesterov_step<double>(p, g, v, {}), DimensionError);
}

TEST(Sgd, OptimizerSkipsFrozenAndClearsGradients) {
  Tensor<double> w({2}, {1.0, 1.0}, true), frozen({1}, {0.0}, true);
  ParamList<double> params{{"w", w, true}, {"frozen", frozen, false}};
  backward(ops::add(ops::sum(w), ops::sum(frozen)));
  SgdNesterov<double> opt(0.0, 0.0);
  opt.step(params, 0.5);
  EXPECT_DOUBLE_EQ(w.at(0), 0.5);
  EXPECT_EQ(frozen.at(0), 0.0);
  EXPECT_FALSE(w.has_grad());
  EXPECT_FALSE(frozen.has_grad());
  EXPECT_EQ(opt.velocity().count("frozen"), 0u);
}

TEST(LrSchedule, TenfoldDropEveryPeriod) {
  const LrSchedule s{0.1, 0.1, 400};
  EXPECT_DOUBLE_EQ(lr_at(0, s), 0.1);
  EXPECT_NEAR(lr_at(400, s), 0.01, 1e-15);
  EXPECT_NEAR(lr_at(800, s), 0.001, 1e-15);
}

TEST(LrSchedule, DecayStartsAtPeriodBoundary) {
  const LrSchedule s{0.1, 0.1, 40};
  EXPECT_DOUBLE_EQ(lr_at(39, s), 0.1);
  EXPECT_NEAR(lr_at(40, s), 0.01, 1e-15);
  double prev = lr_at(0, s);
  for (std::size_t e = 1; e < 200; ++e) {
    EXPECT_LE(lr_at(e, s), prev);
    prev = lr_at(e, s);
  }
  EXPECT_THROW(lr_at(3, {0.1, 0.1, 0}), ContractError);
}

TEST(TrainConfigCheck, RejectsBadValues) {
  TrainConfig t;
  t.lr.initial = 0;
  EXPECT_THROW(t.validate(), ContractError);
  t = TrainConfig{};
  t.momentum = 1.0;
  EXPECT_THROW(t.validate(), ContractError);
  t = TrainConfig{};
  t.lr.factor = 1.5;
  EXPECT_THROW(t.validate(), ContractError);
}

TEST(Train, OneSmallStepLowersFixedEpisodeLoss) {
  auto prob = small_problem(3);
  int failures = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    Model<float> model(small_model(), seed);
    Rng rng(seed);
    auto ep = sample_episode({5, 2, 3, Split::base}, prob.data, prob.splits.base, rng);
    auto batch = make_batch<float>(prob.data, ep);
    auto params = model.parameters();
    const float before = model.loss(batch, true).item();
    backward(model.loss(batch, true));
    SgdNesterov<float> opt(0.9, 0.0);
    opt.step(params, 1e-3);
    const float after = model.loss(batch, true).item();
    Tape<float>::current().clear();
    failures += !(after < before);
  }
  EXPECT_LE(failures, 1);
}

TEST(Train, LogIsReproducibleAndCheckpointRestoresValAccuracy) {
  auto prob = small_problem(4);
  auto run = [&] {
    Model<float> model(small_model(), 7);
    auto result = train(model, prob.data, prob.splits, short_run(7));
    std::ostringstream log;
    write_training_log(log, result.log);
    return std::make_pair(log.str(), result);
  };
  auto [log1, r1] = run();
  auto [log2, r2] = run();
  EXPECT_EQ(log1, log2);
  EXPECT_EQ(r1.best.serialize(), r2.best.serialize());
  ASSERT_EQ(r1.log.size(), 4u);
  EXPECT_FALSE(r1.log[0].val_acc.has_value());
  EXPECT_TRUE(r1.log[1].val_acc.has_value());
  EXPECT_TRUE(r1.log[3].val_acc.has_value());
  EXPECT_EQ(log1.substr(0, log1.find('\n')), "epoch,loss,lr,lambda1,lambda2,tau,val_acc");

  Model<float> fresh(small_model(), 99);
  fresh.load_checkpoint(r1.best);
  EXPECT_EQ(validation_accuracy(fresh, prob.data, prob.splits, short_run(7)), r1.best_val_acc);
  EXPECT_EQ(r1.log[r1.best_epoch - 1].val_acc.value(), r1.best_val_acc);
}

TEST(Train, NonFiniteLossAbortsWithEpisodeSeed) {
  auto prob = small_problem(5);
  Model<float> model(small_model(Variant::protonet_baseline), 3);
  model.metric().log_tau.mutable_values()[0] = 200.f;  // exp overflows in float
  try {
    train(model, prob.data, prob.splits, short_run(11));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("episode seed " + std::to_string(episode_seed(11, 0))), std::string::npos) << msg;
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
  }
}

TEST(Train, NegativeFusionWeightIsReportedOnce) {
  auto prob = small_problem(6);
  Model<float> model(small_model(), 3);
  model.metric().lambda1.mutable_values()[0] = -0.5f;
  int warnings = 0;
  TrainHooks hooks;
  hooks.warn = [&](const std::string&) { ++warnings; };
  train(model, prob.data, prob.splits, short_run(12), hooks);
  EXPECT_EQ(warnings, 1);
}
