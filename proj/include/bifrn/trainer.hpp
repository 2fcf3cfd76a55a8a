#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "bifrn/checkpoint.hpp"
#include "bifrn/episodes.hpp"
#include "bifrn/model.hpp"

namespace bifrn {

/// lr = initial * factor^floor(epoch / period).
struct LrSchedule {
  double initial = 0.1;
  double factor = 0.1;
  std::size_t period = 40;
};

double lr_at(std::size_t epoch, const LrSchedule& schedule);

struct SgdHyper {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// One Nesterov step on a flat parameter block:
/// g += wd * p; v = mu * v + g; p -= lr * (g + mu * v).
template <typename T>
void sgd_nesterov_step(std::span<T> params, std::span<const T> grads, std::span<T> velocity, const SgdHyper& hyper);

/// Velocity buffers keyed by parameter name.
template <typename T>
class SgdNesterov {
 public:
  SgdNesterov(double momentum, double weight_decay);

  /// Updates every trainable parameter that received a gradient, then
  /// clears all gradients.
  void step(const ParamList<T>& params, double lr);

  const std::map<std::string, std::vector<T>>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, std::vector<T>> velocity_;
};

struct TrainConfig {
  std::size_t epochs = 120;
  std::size_t episodes_per_epoch = 50;
  EpisodeSpec episode{5, 5, 15, Split::base};
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t eval_period = 20;
  std::size_t val_episodes = 200;
  EpisodeSpec val_episode{5, 1, 15, Split::val};
  AugmentConfig augment;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LogRow {
  std::size_t epoch = 0;  // 1-based
  double loss = 0;        // mean over the epoch's episodes
  double lr = 0;
  double lambda1 = 0;
  double lambda2 = 0;
  double tau = 0;
  std::optional<double> val_acc;
};

struct TrainResult {
  std::vector<LogRow> log;
  Checkpoint best;
  double best_val_acc = -1;
  std::size_t best_epoch = 0;
};

/// Hooks for progress reporting; all optional.
struct TrainHooks {
  std::function<void(const LogRow&)> on_epoch;
  std::function<void(const std::string&)> warn;
};

/// Episodic training on the base split with validation every eval_period
/// epochs (and after the last epoch) on fixed val episodes. The returned
/// checkpoint is the one with the highest val accuracy, earliest on ties.
/// A non-finite value during an episode aborts with NumericError naming the
/// epoch, episode and episode seed.
TrainResult train(Model<float>& model, const Dataset& data, const ClassSplits& splits, const TrainConfig& config,
                  const TrainHooks& hooks = {});

/// Mean accuracy over the fixed validation episodes used by train().
double validation_accuracy(Model<float>& model, const Dataset& data, const ClassSplits& splits,
                           const TrainConfig& config);

/// Seed of training episode `index` (counted across epochs).
std::uint64_t episode_seed(std::uint64_t root, std::size_t index);

void write_training_log(std::ostream& out, const std::vector<LogRow>& log);

}  // namespace bifrn
