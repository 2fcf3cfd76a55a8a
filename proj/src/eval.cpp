#include "bifrn/eval.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "bifrn/errors.hpp"
#include "bifrn/ops.hpp"

namespace bifrn {

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

AccuracySummary summarize_accuracies(std::span<const double> accuracies) {
  AccuracySummary s;
  const std::size_t n = accuracies.size();
  if (n == 0) return s;
  double total = 0;
  for (double a : accuracies) total += a;
  s.mean = total / static_cast<double>(n);
  if (n < 2) return s;
  double ss = 0;
  for (double a : accuracies) ss += (a - s.mean) * (a - s.mean);
  const double std = std::sqrt(ss / static_cast<double>(n - 1));
  s.ci95 = 1.96 * std / std::sqrt(static_cast<double>(n));
  return s;
}

template <typename T>
double episode_accuracy(Model<T>& model, const EpisodeBatch<T>& batch) {
  NoGradGuard no_grad;
  auto d = model.distances(batch, false);
  const auto predicted = predict(normalize_distances(d));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == batch.query_labels[i];
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

template <typename T>
EvalReport evaluate(Model<T>& model, const Dataset& data, const std::vector<std::size_t>& pool,
                    const EpisodeSpec& spec, std::size_t n_tasks, std::uint64_t seed, std::string tag) {
  if (n_tasks == 0) throw ContractError("evaluate: n_tasks must be >= 1");
  EvalReport report;
  report.tag = std::move(tag);
  report.seed = seed;
  report.spec = spec;
  const auto groups = data.by_class();
  report.accuracies.reserve(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    Rng rng = make_rng(seed, "eval", t);
    const Episode ep = sample_episode(spec, groups, pool, rng);
    report.accuracies.push_back(episode_accuracy(model, make_batch<T>(data, ep)));
  }
  const auto s = summarize_accuracies(report.accuracies);
  report.mean = s.mean;
  report.ci95 = s.ci95;
  return report;
}

void write_eval_csv(std::ostream& out, const EvalReport& report) {
  out << "task_id,accuracy\n";
  for (std::size_t t = 0; t < report.accuracies.size(); ++t) out << t << ',' << exact(report.accuracies[t]) << '\n';
  out << report.tasks() << ',' << exact(report.mean) << ',' << exact(report.ci95) << '\n';
}

VariationReport variation_stats(const std::vector<std::vector<double>>& features, const std::vector<std::size_t>& labels,
                                std::string stage) {
  if (features.size() != labels.size()) throw DimensionError("variation_stats: features and labels differ in count");
  if (features.empty()) throw ContractError("variation_stats: no samples");
  const std::size_t dim = features.front().size();
  for (const auto& f : features) {
    if (f.size() != dim) throw DimensionError("variation_stats: feature vectors differ in length");
  }

  // Over a set S: sum_{i<j} |a_i - a_j|^2 = |S| * sum |a_i|^2 - |sum a_i|^2.
  struct Acc {
    std::size_t n = 0;
    double sq = 0;
    std::vector<double> total;
  };
  std::map<std::size_t, Acc> by_class;
  Acc all;
  all.total.assign(dim, 0.0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    auto& a = by_class[labels[i]];
    if (a.total.empty()) a.total.assign(dim, 0.0);
    double norm = 0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double v = features[i][k];
      norm += v * v;
      a.total[k] += v;
      all.total[k] += v;
    }
    a.n += 1;
    a.sq += norm;
    all.n += 1;
    all.sq += norm;
  }
  if (by_class.size() < 2) throw ContractError("variation_stats: need at least 2 classes");

  auto pair_sum = [](const Acc& a) {
    double t2 = 0;
    for (double v : a.total) t2 += v * v;
    return static_cast<double>(a.n) * a.sq - t2;
  };
  double intra_sum = 0;
  double intra_pairs = 0;
  for (const auto& [label, a] : by_class) {
    if (a.n < 2) throw ContractError("variation_stats: class " + std::to_string(label) + " has fewer than 2 samples");
    intra_sum += pair_sum(a);
    intra_pairs += 0.5 * static_cast<double>(a.n) * static_cast<double>(a.n - 1);
  }
  const double all_pairs = 0.5 * static_cast<double>(all.n) * static_cast<double>(all.n - 1);
  const double inter_sum = pair_sum(all) - intra_sum;

  VariationReport r;
  r.stage = std::move(stage);
  r.samples = all.n;
  r.classes = by_class.size();
  // Cancellation can leave tiny negative sums for identical samples.
  r.intra = std::max(0.0, intra_sum / intra_pairs);
  r.inter = std::max(0.0, inter_sum / (all_pairs - intra_pairs));
  r.ratio = r.intra == 0 ? 0.0 : r.intra / r.inter;
  return r;
}

namespace {

template <typename T>
std::vector<double> flat_rows(const Tensor<T>& rows, std::size_t begin, std::size_t count) {
  const std::size_t d = rows.dim(1);
  auto v = rows.values();
  return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(begin * d),
                             v.begin() + static_cast<std::ptrdiff_t>((begin + count) * d));
}

}  // namespace

template <typename T>
std::vector<VariationReport> analyze(Model<T>& model, const Dataset& data, const std::vector<std::size_t>& pool,
                                     const EpisodeSpec& spec, std::size_t n_episodes, std::uint64_t seed) {
  NoGradGuard no_grad;
  const std::size_t r = model.r();
  const bool fsrm = model.config().uses_fsrm();
  const bool fmrm = model.config().uses_fmrm();
  std::vector<std::vector<double>> raw, post_fsrm, own, cross;
  std::vector<std::size_t> labels;
  const auto groups = data.by_class();
  for (std::size_t e = 0; e < n_episodes; ++e) {
    Rng rng = make_rng(seed, "analyze", e);
    const Episode ep = sample_episode(spec, groups, pool, rng);
    const auto batch = make_batch<T>(data, ep);
    const auto embedded = model.embed_rows(batch.inputs, false);
    const auto rows = model.self_reconstruct(embedded);
    const std::size_t way = spec.way, shot = spec.shot;
    const std::size_t support_rows = way * shot * r;
    const std::size_t nq = ep.query.size();
    const auto queries = ops::slice_rows(rows, support_rows, nq * r);

    std::vector<Tensor<T>> recon;
    if (fmrm) {
      for (std::size_t c = 0; c < way; ++c) {
        recon.push_back(reconstruct_query(queries, ops::slice_rows(rows, c * shot * r, shot * r), model.fmrm()));
      }
    }
    for (std::size_t i = 0; i < nq; ++i) {
      const std::size_t y = ep.query_labels[i];
      labels.push_back(ep.class_map[y]);
      raw.push_back(flat_rows(embedded, support_rows + i * r, r));
      if (fsrm) post_fsrm.push_back(flat_rows(rows, support_rows + i * r, r));
      if (fmrm) {
        own.push_back(flat_rows(recon[y], i * r, r));
        const std::size_t other = (y + 1 + i % (way - 1)) % way;
        cross.push_back(flat_rows(recon[other], i * r, r));
      }
    }
  }
  std::vector<VariationReport> out;
  out.push_back(variation_stats(raw, labels, "raw"));
  if (fsrm) out.push_back(variation_stats(post_fsrm, labels, "post_fsrm"));
  if (fmrm) {
    out.push_back(variation_stats(own, labels, "post_fmrm"));
    out.push_back(variation_stats(cross, labels, "post_fmrm_cross"));
  }
  return out;
}

void write_variation_csv(std::ostream& out, const std::vector<VariationReport>& reports) {
  out << "stage,intra,inter,ratio,samples,classes\n";
  for (const auto& r : reports) {
    out << r.stage << ',' << exact(r.intra) << ',' << exact(r.inter) << ',' << exact(r.ratio) << ',' << r.samples << ','
        << r.classes << '\n';
  }
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "variant,1shot_acc,1shot_ci,5shot_acc,5shot_ci\n";
  for (Variant v : all_variants()) {
    const AblationRow* row = nullptr;
    for (const auto& candidate : rows) {
      if (candidate.variant == v) row = &candidate;
    }
    if (!row) throw ContractError("ablation table is missing variant '" + std::string(variant_name(v)) + "'");
    out << variant_name(v) << ',' << exact(row->one_shot.mean) << ',' << exact(row->one_shot.ci95) << ','
        << exact(row->five_shot.mean) << ',' << exact(row->five_shot.ci95) << '\n';
  }
}

template double episode_accuracy(Model<float>&, const EpisodeBatch<float>&);
template double episode_accuracy(Model<double>&, const EpisodeBatch<double>&);
template EvalReport evaluate(Model<float>&, const Dataset&, const std::vector<std::size_t>&, const EpisodeSpec&,
                             std::size_t, std::uint64_t, std::string);
template EvalReport evaluate(Model<double>&, const Dataset&, const std::vector<std::size_t>&, const EpisodeSpec&,
                             std::size_t, std::uint64_t, std::string);
template std::vector<VariationReport> analyze(Model<float>&, const Dataset&, const std::vector<std::size_t>&,
                                              const EpisodeSpec&, std::size_t, std::uint64_t);
template std::vector<VariationReport> analyze(Model<double>&, const Dataset&, const std::vector<std::size_t>&,
                                              const EpisodeSpec&, std::size_t, std::uint64_t);

}  // namespace bifrn
