#include "bifrn/trainer.hpp"

#include <cmath>

#include "bifrn/errors.hpp"
#include "bifrn/eval.hpp"

namespace bifrn {

double lr_at(std::size_t epoch, const LrSchedule& schedule) {
  if (schedule.period == 0) throw ContractError("lr decay period must be >= 1");
  return schedule.initial * std::pow(schedule.factor, static_cast<double>(epoch / schedule.period));
}

template <typename T>
void sgd_nesterov_step(std::span<T> params, std::span<const T> grads, std::span<T> velocity, const SgdHyper& hyper) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw DimensionError("sgd step: parameter, gradient and velocity sizes differ (" + std::to_string(params.size()) +
                         ", " + std::to_string(grads.size()) + ", " + std::to_string(velocity.size()) + ")");
  }
  const T lr = static_cast<T>(hyper.lr), mu = static_cast<T>(hyper.momentum), wd = static_cast<T>(hyper.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i] + wd * params[i];
    velocity[i] = mu * velocity[i] + g;
    params[i] -= lr * (g + mu * velocity[i]);
  }
}

template <typename T>
SgdNesterov<T>::SgdNesterov(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {
  if (!(momentum >= 0 && momentum < 1)) throw ContractError("momentum must be in [0, 1)");
  if (weight_decay < 0) throw ContractError("weight decay must be >= 0");
}

template <typename T>
void SgdNesterov<T>::step(const ParamList<T>& params, double lr) {
  const SgdHyper hyper{lr, momentum_, weight_decay_};
  for (const auto& p : params) {
    Tensor<T> t = p.tensor;
    if (!p.trainable || !t.has_grad()) continue;
    auto [it, fresh] = velocity_.try_emplace(p.name, t.numel(), T{0});
    if (it->second.size() != t.numel()) {
      throw DimensionError("optimizer state for '" + p.name + "' has " + std::to_string(it->second.size()) +
                           " entries, parameter has " + std::to_string(t.numel()));
    }
    sgd_nesterov_step<T>(t.mutable_values(), t.grad(), it->second, hyper);
  }
  for (const auto& p : params) {
    Tensor<T> t = p.tensor;
    t.zero_grad();
  }
}

template class SgdNesterov<float>;
template class SgdNesterov<double>;
template void sgd_nesterov_step(std::span<float>, std::span<const float>, std::span<float>, const SgdHyper&);
template void sgd_nesterov_step(std::span<double>, std::span<const double>, std::span<double>, const SgdHyper&);

void TrainConfig::validate() const {
  if (epochs == 0) throw ContractError("train.epochs must be >= 1");
  if (episodes_per_epoch == 0) throw ContractError("train.episodes_per_epoch must be >= 1");
  if (!(lr.initial > 0)) throw ContractError("train.lr must be > 0");
  if (!(lr.factor > 0 && lr.factor <= 1)) throw ContractError("train.lr_decay must be in (0, 1]");
  if (lr.period == 0) throw ContractError("train.lr_period must be >= 1");
  if (!(momentum >= 0 && momentum < 1)) throw ContractError("train.momentum must be in [0, 1)");
  if (weight_decay < 0) throw ContractError("train.weight_decay must be >= 0");
  if (eval_period == 0) throw ContractError("train.eval_period must be >= 1");
  if (val_episodes == 0) throw ContractError("train.val_episodes must be >= 1");
  episode.validate();
  val_episode.validate();
}

std::uint64_t episode_seed(std::uint64_t root, std::size_t index) { return derive_seed(root, "episodes", index); }

double validation_accuracy(Model<float>& model, const Dataset& data, const ClassSplits& splits,
                           const TrainConfig& config) {
  return evaluate(model, data, splits.val, config.val_episode, config.val_episodes, derive_seed(config.seed, "val"))
      .mean;
}

TrainResult train(Model<float>& model, const Dataset& data, const ClassSplits& splits, const TrainConfig& config,
                  const TrainHooks& hooks) {
  config.validate();
  const auto groups = data.by_class();
  SgdNesterov<float> optimizer(config.momentum, config.weight_decay);
  const auto params = model.parameters();
  TrainResult result;
  bool warned_negative = false;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(epoch, config.lr);
    double loss_total = 0;
    for (std::size_t i = 0; i < config.episodes_per_epoch; ++i) {
      const std::size_t index = epoch * config.episodes_per_epoch + i;
      const std::uint64_t seed = episode_seed(config.seed, index);
      try {
        Rng rng(seed);
        const Episode ep = sample_episode(config.episode, groups, splits.base, rng);
        const auto batch = make_batch<float>(data, ep, config.augment, &rng);
        auto loss = model.loss(batch, true);
        loss_total += loss.item();
        backward(loss);
        optimizer.step(params, lr);
      } catch (const NumericError& e) {
        Tape<float>::current().clear();
        throw NumericError("non-finite value in training epoch " + std::to_string(epoch + 1) + ", episode " +
                           std::to_string(i) + " (episode seed " + std::to_string(seed) + "): " + e.what());
      }
    }

    LogRow row;
    row.epoch = epoch + 1;
    row.loss = loss_total / static_cast<double>(config.episodes_per_epoch);
    row.lr = lr;
    row.lambda1 = model.metric().lambda1.item();
    row.lambda2 = model.metric().lambda2.item();
    row.tau = model.metric().tau();
    if ((row.lambda1 < 0 || row.lambda2 < 0) && !warned_negative && hooks.warn) {
      hooks.warn("a fusion weight went negative at epoch " + std::to_string(row.epoch) +
                 " (lambda1=" + exact(row.lambda1) + ", lambda2=" + exact(row.lambda2) + ")");
      warned_negative = true;
    }
    if ((epoch + 1) % config.eval_period == 0 || epoch + 1 == config.epochs) {
      row.val_acc = validation_accuracy(model, data, splits, config);
      if (*row.val_acc > result.best_val_acc) {
        result.best_val_acc = *row.val_acc;
        result.best_epoch = row.epoch;
        result.best = model.to_checkpoint();
      }
    }
    result.log.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row);
  }
  return result;
}

void write_training_log(std::ostream& out, const std::vector<LogRow>& log) {
  out << "epoch,loss,lr,lambda1,lambda2,tau,val_acc\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << exact(r.loss) << ',' << exact(r.lr) << ',' << exact(r.lambda1) << ',' << exact(r.lambda2)
        << ',' << exact(r.tau) << ',';
    if (r.val_acc) out << exact(*r.val_acc);
    out << '\n';
  }
}

}  // namespace bifrn
