#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "bifrn/fsrm.hpp"
#include "bifrn/ops.hpp"
#include "bridge.hpp"
#include "test_util.hpp"

using namespace bifrn;
using testutil::random_tensor;

namespace {

using TD = Tensor<double>;

FsrmParams<double> random_params(const FsrmConfig& c, Rng& rng) {
  auto p = FsrmParams<double>::init(c, rng);
  // Non-trivial LN affine and biases so the oracle sees every term.
  for (auto* t : {&p.ln_gain, &p.ln_bias, &p.mlp_b1, &p.mlp_b2, &p.ln2_gain, &p.ln2_bias}) {
    *t = random_tensor<double>(t->shape(), rng, 0.5);
  }
  return p;
}

void fill(TD& t, double value) {
  for (auto& v : t.mutable_values()) v = value;
}

}  // namespace

TEST(PositionalEncoding, FirstPositionIsSinCosOfZero) {
  auto pe = positional_encoding<double>(4, 6);
  for (std::size_t i = 0; i < 6; i += 2) {
    EXPECT_EQ(pe.at(0, i), 0.0);
    EXPECT_EQ(pe.at(0, i + 1), 1.0);
  }
}

TEST(PositionalEncoding, MatchesOracleAndStaysInUnitRange) {
  auto pe = positional_encoding<double>(25, 64);
  EXPECT_LT(bridge::max_diff(pe, oracle::positional_encoding(25, 64)), 1e-12);
  for (double v : pe.values()) {
    EXPECT_LE(v, 1.0);
    EXPECT_GE(v, -1.0);
  }
}

TEST(AddPosition, ZeroFeaturesGiveTable) {
  auto pe = positional_encoding<double>(3, 4);
  auto out = add_position(TD::zeros({6, 4}), pe);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(out.at(n * 12 + i), pe.at(i));
}

TEST(AddPosition, ElementwiseSumOracle) {
  Rng rng(3);
  auto x = random_tensor<double>({8, 5}, rng, 1.0, false);
  auto pe = positional_encoding<double>(4, 5);
  auto out = add_position(x, pe);
  for (std::size_t row = 0; row < 8; ++row)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(out.at(row, j), x.at(row, j) + pe.at(row % 4, j));
  EXPECT_THROW(add_position(TD::zeros({6, 5}), pe), DimensionError);
  EXPECT_THROW(add_position(TD::zeros({8, 4}), pe), DimensionError);
}

TEST(SelfAttend, SingleRowReturnsValueRow) {
  Rng rng(1);
  FsrmConfig c{4};
  auto p = random_params(c, rng);
  auto z = random_tensor<double>({1, 4}, rng, 1.0, false);
  auto out = self_attend(z, p, 1);
  auto value = ops::matmul(z, p.wv);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.at(j), value.at(j), 1e-15);
}

TEST(SelfAttend, ZeroQueryKeyGivesMeanRow) {
  Rng rng(2);
  FsrmConfig c{3};
  auto p = random_params(c, rng);
  fill(p.wq, 0);
  fill(p.wk, 0);
  p.wv = TD({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto z = random_tensor<double>({4, 3}, rng, 1.0, false);
  auto out = self_attend(z, p, 4);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < 4; ++i) mean += z.at(i, j) / 4;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.at(i, j), mean, 1e-14);
  }
}

TEST(SelfAttend, MatchesStepByStepOracle) {
  Rng rng(3);
  FsrmConfig c{2};
  auto p = random_params(c, rng);
  auto z = random_tensor<double>({2, 2}, rng, 1.0, false);
  const auto zo = oracle::from(z);
  const auto w = bridge::fsrm(p, false);
  const auto want = oracle::attention(oracle::matmul(zo, w.wq), oracle::matmul(zo, w.wk), oracle::matmul(zo, w.wv));
  EXPECT_LT(bridge::max_diff(self_attend(z, p, 2), want), 1e-10);
}

TEST(SelfAttend, WeightsLieOnSimplex) {
  Rng rng(4);
  FsrmConfig c{8};
  auto p = FsrmParams<float>::init(c, rng);
  for (int trial = 0; trial < 20; ++trial) {
    auto z = random_tensor<float>({3 * 5, 8}, rng, 3.0, false);
    auto w = self_attention_weights(z, p, 5);
    ASSERT_EQ(w.shape(), (Shape{3, 5, 5}));
    for (std::size_t row = 0; row < 15; ++row) {
      double total = 0;
      for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_GE(w.at(row * 5 + j), 0.0f);
        total += w.at(row * 5 + j);
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(FsrmForward, MatchesOraclePerSample) {
  for (bool standard : {false, true}) {
    Rng rng(5);
    FsrmConfig c{3, 5, standard};
    auto p = random_params(c, rng);
    auto x = random_tensor<double>({2 * 3, 3}, rng, 1.0, false);
    auto pe = positional_encoding<double>(3, 3);
    auto out = fsrm_forward(x, pe, p, c);
    ASSERT_EQ(out.shape(), x.shape());
    const auto w = bridge::fsrm(p, standard);
    const auto xo = oracle::from(x);
    for (std::size_t n = 0; n < 2; ++n) {
      const auto want = oracle::fsrm(oracle::block(xo, n * 3, 3), oracle::positional_encoding(3, 3), w);
      EXPECT_LT(bridge::max_diff(ops::slice_rows(out, n * 3, 3), want), 1e-10) << "standard " << standard;
    }
  }
}

TEST(FsrmForward, ZeroMlpGivesZeroOutput) {
  Rng rng(6);
  FsrmConfig c{4};
  auto p = random_params(c, rng);
  fill(p.mlp_w1, 0);
  fill(p.mlp_b1, 0);
  fill(p.mlp_w2, 0);
  fill(p.mlp_b2, 0);
  auto out = fsrm_forward(random_tensor<double>({8, 4}, rng, 2.0, false), positional_encoding<double>(4, 4), p, c);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(FsrmForward, EquivariantUnderRowPermutationWithConstantTable) {
  Rng rng(7);
  FsrmConfig c{4};
  auto p = random_params(c, rng);
  const std::size_t r = 5;
  auto pe = random_tensor<double>({1, 4}, rng, 1.0, false);
  std::vector<double> rows;
  for (std::size_t i = 0; i < r; ++i) rows.insert(rows.end(), pe.values().begin(), pe.values().end());
  const TD table({r, 4}, rows);
  auto x = random_tensor<double>({r, 4}, rng, 1.0, false);
  std::vector<std::size_t> perm(r);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> permuted;
  for (std::size_t i : perm)
    for (std::size_t j = 0; j < 4; ++j) permuted.push_back(x.at(i, j));
  auto out = fsrm_forward(x, table, p, c);
  auto out_perm = fsrm_forward(TD({r, 4}, permuted), table, p, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out_perm.at(i, j), out.at(perm[i], j), 1e-12);
}

TEST(FsrmForward, ParameterGradientsMatchFiniteDifferences) {
  for (bool standard : {false, true}) {
    Rng rng(8);
    FsrmConfig c{4, 6, standard};
    auto p = random_params(c, rng);
    auto x = random_tensor<double>({2 * 3, 4}, rng, 1.0, false);
    auto pe = positional_encoding<double>(3, 4);
    std::vector<TD> params;
    for (auto& np : p.parameters(c)) params.push_back(np.tensor);
    const double err = testutil::fd_error([&] { return ops::sum(fsrm_forward(x, pe, p, c)); }, params);
    EXPECT_LT(err, 1e-3) << "standard " << standard;
  }
}

TEST(FsrmForward, BitForBitRepeatable) {
  auto run = [] {
    Rng rng(derive_seed(42, "init"));
    FsrmConfig c{16};
    auto p = FsrmParams<float>::init(c, rng);
    Rng data(9);
    auto x = random_tensor<float>({4 * 4, 16}, data, 1.0, false);
    auto out = fsrm_forward(x, positional_encoding<float>(4, 16), p, c);
    return std::vector<float>(out.values().begin(), out.values().end());
  };
  EXPECT_EQ(run(), run());
}
