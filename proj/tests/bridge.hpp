#pragma once

// Copies library parameter structs into oracle matrices.

#include <algorithm>
#include <cmath>
#include <limits>

#include "bifrn/fmrm.hpp"
#include "bifrn/fsrm.hpp"
#include "oracle.hpp"

namespace bridge {

template <typename T>
oracle::Fsrm fsrm(const bifrn::FsrmParams<T>& p, bool standard_block) {
  return {oracle::from(p.wq),     oracle::from(p.wk),      oracle::from(p.wv),      oracle::from(p.ln_gain),
          oracle::from(p.ln_bias), oracle::from(p.mlp_w1), oracle::from(p.mlp_b1), oracle::from(p.mlp_w2),
          oracle::from(p.mlp_b2), oracle::from(p.ln2_gain), oracle::from(p.ln2_bias), standard_block};
}

template <typename T>
oracle::Proj proj(const bifrn::Projection<T>& w) {
  return {oracle::from(w.wq), oracle::from(w.wk), oracle::from(w.wv)};
}

/// Largest elementwise |got - want|.
template <typename T>
double max_diff(const bifrn::Tensor<T>& got, const oracle::Mat& want) {
  if (got.numel() != want.v.size()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < want.v.size(); ++i)
    m = std::max(m, static_cast<double>(std::abs(static_cast<oracle::Real>(got.at(i)) - want.v[i])));
  return m;
}

}  // namespace bridge
