#include "bifrn/gradcheck.hpp"

#include <cmath>

#include "bifrn/errors.hpp"
#include "bifrn/fmrm.hpp"
#include "bifrn/fsrm.hpp"
#include "bifrn/metric.hpp"
#include "bifrn/model.hpp"
#include "bifrn/ops.hpp"
#include "bifrn/params.hpp"

namespace bifrn {

namespace {
constexpr double kZeroGradientFloor = 1e-5;
}

double gradient_error(const GradFn& f, const std::vector<Tensor<double>>& inputs, Rng& rng, double eps) {
  std::vector<Tensor<double>> xs = inputs;
  for (auto& x : xs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  Tensor<double> weights;
  {
    NoGradGuard no_grad;
    const Tensor<double> probe = f(xs);
    weights = normal_tensor<double>(probe.shape(), 1.0, rng).detach();
  }
  auto objective = [&] { return ops::sum(ops::mul(f(xs), weights)); };

  backward(objective());
  double worst = 0;
  for (auto& x : xs) {
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());
    std::vector<double> numeric(x.numel());
    {
      NoGradGuard no_grad;
      auto v = x.mutable_values();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double saved = v[i];
        v[i] = saved + eps;
        const double up = objective().item();
        v[i] = saved - eps;
        const double down = objective().item();
        v[i] = saved;
        numeric[i] = (up - down) / (2 * eps);
      }
    }
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    // Gradients that are identically zero only carry round-off on the
    // numeric side, so tiny norms are compared against an absolute floor.
    const double denom = std::max(std::sqrt(na) + std::sqrt(nn), kZeroGradientFloor);
    worst = std::max(worst, std::sqrt(diff) / denom);
    x.zero_grad();
  }
  return worst;
}

namespace {

using TD = Tensor<double>;

TD randn(Shape s, Rng& rng, double stddev = 1.0) { return normal_tensor<double>(std::move(s), stddev, rng); }

// Values bounded away from zero so a kink never sits inside the stencil.
TD away_from_zero(Shape s, Rng& rng) {
  TD t = randn(std::move(s), rng);
  for (auto& v : t.mutable_values()) v = v < 0 ? v - 0.1 : v + 0.1;
  return t;
}

std::vector<TD> tensors_of(const ParamList<double>& params) {
  std::vector<TD> out;
  for (const auto& p : params) {
    if (p.trainable) out.push_back(p.tensor);
  }
  return out;
}

struct Case {
  std::string name;
  GradFn f;
  std::vector<TD> inputs;
};

std::vector<Case> primitive_cases(Rng& rng) {
  std::vector<Case> cases;
  auto unary = [&](std::string name, auto op, TD x) {
    cases.push_back({std::move(name), [op](const std::vector<TD>& in) { return op(in[0]); }, {std::move(x)}});
  };
  auto binary = [&](std::string name, auto op, TD a, TD b) {
    cases.push_back(
        {std::move(name), [op](const std::vector<TD>& in) { return op(in[0], in[1]); }, {std::move(a), std::move(b)}});
  };

  binary("add", [](const TD& a, const TD& b) { return ops::add(a, b); }, randn({3, 4}, rng), randn({3, 4}, rng));
  binary("sub", [](const TD& a, const TD& b) { return ops::sub(a, b); }, randn({3, 4}, rng), randn({3, 4}, rng));
  binary("mul", [](const TD& a, const TD& b) { return ops::mul(a, b); }, randn({3, 4}, rng), randn({3, 4}, rng));
  unary("scale", [](const TD& a) { return ops::scale(a, -1.7); }, randn({3, 4}, rng));
  binary("mul_scalar", [](const TD& a, const TD& s) { return ops::mul_scalar(a, s); }, randn({3, 4}, rng),
         randn({1}, rng));
  binary("add_broadcast", [](const TD& x, const TD& y) { return ops::add_broadcast(x, y); }, randn({2, 3, 4}, rng),
         randn({3, 4}, rng));
  unary("exp", [](const TD& a) { return ops::exp(a); }, randn({3, 4}, rng, 0.5));
  unary("relu", [](const TD& a) { return ops::relu(a); }, away_from_zero({3, 4}, rng));
  unary("reshape", [](const TD& a) { return ops::reshape(a, Shape{4, 3}); }, randn({3, 4}, rng));
  unary("transpose", [](const TD& a) { return ops::transpose(a); }, randn({3, 4}, rng));
  unary("transpose_last2", [](const TD& a) { return ops::transpose_last2(a); }, randn({2, 3, 4}, rng));
  binary("matmul", [](const TD& a, const TD& b) { return ops::matmul(a, b); }, randn({3, 4}, rng), randn({4, 5}, rng));
  binary("bmm", [](const TD& a, const TD& b) { return ops::bmm(a, b); }, randn({2, 3, 4}, rng), randn({2, 4, 5}, rng));
  unary("softmax_rows", [](const TD& a) { return ops::softmax_rows(a); }, randn({4, 5}, rng));
  unary("log_softmax_rows", [](const TD& a) { return ops::log_softmax_rows(a); }, randn({4, 5}, rng));
  cases.push_back({"layer_norm",
                   [](const std::vector<TD>& in) { return ops::layer_norm(in[0], in[1], in[2], 1e-5); },
                   {randn({5, 6}, rng), randn({6}, rng), randn({6}, rng)}});
  unary("sum", [](const TD& a) { return ops::sum(a); }, randn({3, 4}, rng));
  unary("mean", [](const TD& a) { return ops::mean(a); }, randn({3, 4}, rng));
  unary("sq_l2", [](const TD& a) { return ops::sq_l2(a); }, randn({3, 4}, rng));
  unary("block_sum", [](const TD& a) { return ops::block_sum(a, 2); }, randn({6, 3}, rng));
  unary("mean_row_blocks", [](const TD& a) { return ops::mean_row_blocks(a, 3); }, randn({6, 3}, rng));
  unary("slice_rows", [](const TD& a) { return ops::slice_rows(a, 1, 3); }, randn({5, 3}, rng));
  cases.push_back({"stack_rows",
                   [](const std::vector<TD>& in) { return ops::stack_rows(in); },
                   {randn({4}, rng), randn({4}, rng), randn({4}, rng)}});
  binary("pairwise_sq_dist", [](const TD& a, const TD& b) { return ops::pairwise_sq_dist(a, b); }, randn({4, 3}, rng),
         randn({5, 3}, rng));
  unary("nll", [](const TD& a) { return ops::nll(a, {0, 3, 2, 4}); }, randn({4, 5}, rng));
  cases.push_back({"conv2d",
                   [](const std::vector<TD>& in) { return ops::conv2d(in[0], in[1], in[2], 1); },
                   {randn({2, 3, 5, 5}, rng), randn({4, 3, 3, 3}, rng), randn({4}, rng)}});
  unary("max_pool2d", [](const TD& a) { return ops::max_pool2d(a, 2); }, randn({2, 3, 4, 4}, rng));
  {
    auto rm = TD::zeros(Shape{2});
    auto rv = TD::full(Shape{2}, 1.0);
    cases.push_back({"batch_norm2d",
                     [rm, rv](const std::vector<TD>& in) mutable {
                       return ops::batch_norm2d(in[0], in[1], in[2], rm, rv, true, 0.1, 1e-5);
                     },
                     {randn({3, 2, 3, 3}, rng), randn({2}, rng), randn({2}, rng)}});
  }
  unary("to_local_rows", [](const TD& a) { return ops::to_local_rows(a); }, randn({2, 3, 2, 2}, rng));
  unary("from_local_rows", [](const TD& a) { return ops::from_local_rows(a, 2, 2); }, randn({8, 3}, rng));
  cases.push_back({"attention",
                   [](const std::vector<TD>& in) { return attention(in[0], in[1], in[2]); },
                   {randn({5, 4}, rng), randn({3, 4}, rng), randn({3, 4}, rng)}});
  return cases;
}

std::vector<Case> module_cases(Rng& rng) {
  std::vector<Case> cases;
  const std::size_t r = 4, d = 6;
  for (bool standard : {false, true}) {
    const FsrmConfig cfg{d, 5, standard};
    auto p = FsrmParams<double>::init(cfg, rng);
    auto x = randn({2 * r, d}, rng);
    auto pe = positional_encoding<double>(r, d);
    auto inputs = tensors_of(p.parameters(cfg));
    inputs.insert(inputs.begin(), x);
    cases.push_back({standard ? "fsrm_forward(standard block)" : "fsrm_forward",
                     [x, pe, p, cfg](const std::vector<TD>&) { return fsrm_forward(x, pe, p, cfg); }, inputs});
  }
  for (bool separate : {false, true}) {
    auto p = FmrmParams<double>::init(FmrmConfig{d, separate}, rng);
    auto q = randn({2 * r, d}, rng);
    auto s = randn({3 * r, d}, rng);
    auto inputs = tensors_of(p.parameters());
    inputs.insert(inputs.begin(), {q, s});
    const std::string suffix = separate ? "(separate weights)" : "";
    cases.push_back({"reconstruct_query" + suffix,
                     [q, s, p](const std::vector<TD>&) { return reconstruct_query(q, s, p); }, inputs});
    cases.push_back({"reconstruct_support" + suffix,
                     [q, s, p](const std::vector<TD>&) { return reconstruct_support(s, q, p); }, inputs});
  }
  {
    auto m = MetricParams<double>::init();
    m.lambda1.mutable_values()[0] = 0.7;
    m.lambda2.mutable_values()[0] = 0.3;
    m.log_tau.mutable_values()[0] = 0.2;
    auto dqs = randn({4, 3}, rng);
    auto dsq = randn({4, 3}, rng);
    cases.push_back({"fuse",
                     [m](const std::vector<TD>& in) { return fuse(in[0], in[1], m); },
                     {dqs, dsq, m.lambda1, m.lambda2, m.log_tau}});
    cases.push_back({"dist_q_to_s",
                     [](const std::vector<TD>& in) { return dist_q_to_s(in[0], in[1], true); },
                     {randn({4, 3}, rng), randn({4, 3}, rng)}});
    cases.push_back({"dist_s_to_q",
                     [](const std::vector<TD>& in) { return dist_s_to_q(in[0], in[1], false); },
                     {randn({8, 3}, rng), randn({8, 3}, rng)}});
    cases.push_back({"episode_loss",
                     [](const std::vector<TD>& in) { return episode_loss(in[0], {0, 1, 2, 1}); },
                     {randn({4, 3}, rng)}});
  }
  return cases;
}

Case end_to_end(std::string name, ModelConfig config, std::uint64_t seed, Rng& rng) {
  const std::size_t way = 3, shot = 2, queries = 2;
  auto model = std::make_shared<Model<double>>(config, seed);
  EpisodeBatch<double> batch;
  batch.way = way;
  batch.shot = shot;
  for (std::size_t c = 0; c < way; ++c)
    for (std::size_t j = 0; j < queries; ++j) batch.query_labels.push_back(c);
  const std::size_t n = way * (shot + queries);
  if (config.backbone == BackboneKind::bypass) {
    batch.inputs = randn({n * model->r(), model->d()}, rng);
  } else {
    batch.inputs = randn({n, config.in_channels, config.image_size, config.image_size}, rng);
  }
  // Move the temperature and weights off their initial values so every
  // parameter carries a generic gradient.
  model->metric().lambda1.mutable_values()[0] = config.variant == Variant::s_to_q_only ? 0.0 : 0.6;
  model->metric().lambda2.mutable_values()[0] = config.variant == Variant::q_to_s_only ? 0.0 : 0.4;
  model->metric().log_tau.mutable_values()[0] = 0.3;
  auto inputs = tensors_of(model->parameters());
  if (config.backbone == BackboneKind::bypass) inputs.insert(inputs.begin(), batch.inputs);
  return {std::move(name),
          [model, batch](const std::vector<TD>&) {
            auto loss = model->loss(batch, true);
            return ops::reshape(loss, Shape{1});
          },
          inputs};
}

std::vector<Case> end_to_end_cases(std::uint64_t seed, Rng& rng) {
  std::vector<Case> cases;
  ModelConfig base;
  base.channels = 8;
  base.feature_rows = 4;
  for (Variant v : all_variants()) {
    ModelConfig c = base;
    c.variant = v;
    cases.push_back(end_to_end("episode_loss[" + std::string(variant_name(v)) + "]", c, seed, rng));
  }
  {
    ModelConfig c = base;
    c.transformer_standard_block = true;
    c.separate_fmrm_weights = true;
    cases.push_back(end_to_end("episode_loss[full, standard block, separate weights]", c, seed, rng));
  }
  {
    ModelConfig c = base;
    c.normalize_distances = false;
    cases.push_back(end_to_end("episode_loss[full, unnormalized]", c, seed, rng));
  }
  {
    ModelConfig c = base;
    c.backbone = BackboneKind::conv4;
    c.image_size = 16;
    cases.push_back(end_to_end("episode_loss[full, conv4 16px]", c, seed, rng));
  }
  return cases;
}

}  // namespace

std::vector<GradCheckResult> run_gradchecks(std::uint64_t seed, double tolerance) {
  Rng rng = make_rng(seed, "gradcheck");
  std::vector<Case> cases = primitive_cases(rng);
  for (auto& c : module_cases(rng)) cases.push_back(std::move(c));
  for (auto& c : end_to_end_cases(seed, rng)) cases.push_back(std::move(c));

  std::vector<GradCheckResult> results;
  for (const auto& c : cases) {
    GradCheckResult r;
    r.name = c.name;
    r.max_rel_error = gradient_error(c.f, c.inputs, rng);
    r.passed = r.max_rel_error < tolerance;
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace bifrn
