#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "bifrn/episodes.hpp"
#include "bifrn/model.hpp"

namespace bifrn {

struct EvalReport {
  std::string tag;
  std::uint64_t seed = 0;
  EpisodeSpec spec;
  std::vector<double> accuracies;  // one per task, in task order
  double mean = 0;
  double ci95 = 0;  // 1.96 * sample std / sqrt(N)

  std::size_t tasks() const { return accuracies.size(); }
};

struct AccuracySummary {
  double mean = 0;
  double ci95 = 0;
};

/// Mean and 95% half-width. The std is the sample (N-1) estimate; N = 1
/// gives a zero half-width.
AccuracySummary summarize_accuracies(std::span<const double> accuracies);

/// Fraction of the batch's queries whose argmax class matches the label.
template <typename T>
double episode_accuracy(Model<T>& model, const EpisodeBatch<T>& batch);

/// Task t draws its episode from the substream ("eval", t) of `seed`, so a
/// report depends only on (model, data, pool, spec, n_tasks, seed).
template <typename T>
EvalReport evaluate(Model<T>& model, const Dataset& data, const std::vector<std::size_t>& pool,
                    const EpisodeSpec& spec, std::size_t n_tasks, std::uint64_t seed, std::string tag = {});

/// `task_id,accuracy` rows followed by a `N,mean,ci95` summary line.
void write_eval_csv(std::ostream& out, const EvalReport& report);

struct VariationReport {
  std::string stage;
  double intra = 0;  // mean squared distance over same-class pairs
  double inter = 0;  // mean squared distance over cross-class pairs
  double ratio = 0;  // intra / inter
  std::size_t samples = 0;
  std::size_t classes = 0;
};

/// Pairwise statistics over flattened feature vectors. Needs >= 2 classes
/// and >= 2 samples in every class present.
VariationReport variation_stats(const std::vector<std::vector<double>>& features,
                                const std::vector<std::size_t>& labels, std::string stage);

/// Collects query features from `n_episodes` episodes and reports variation
/// at each stage the model has: raw, post_fsrm, post_fmrm (query rebuilt
/// from its own class) and post_fmrm_cross (rebuilt from another class, kept
/// under the query's label). Labels are global class ids.
template <typename T>
std::vector<VariationReport> analyze(Model<T>& model, const Dataset& data, const std::vector<std::size_t>& pool,
                                     const EpisodeSpec& spec, std::size_t n_episodes, std::uint64_t seed);

void write_variation_csv(std::ostream& out, const std::vector<VariationReport>& reports);

struct AblationRow {
  Variant variant = Variant::full;
  EvalReport one_shot;
  EvalReport five_shot;
};

/// Writes `variant,1shot_acc,1shot_ci,5shot_acc,5shot_ci` in the fixed
/// variant order. Throws ContractError if a variant is missing.
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

/// printf-style "%.17g"; round-trips doubles exactly.
std::string exact(double v);

}  // namespace bifrn
