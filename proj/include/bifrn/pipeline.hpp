#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bifrn/config.hpp"
#include "bifrn/eval.hpp"
#include "bifrn/trainer.hpp"

namespace bifrn {

/// Overrides RunConfig::output_dir when set.
inline constexpr const char* kOutputRootEnv = "BIFRN_OUTPUT_ROOT";

struct RunData {
  Dataset dataset;
  ClassSplits splits;
};

/// Generates or loads the dataset and its class splits. Missing image-folder
/// paths raise ConfigError for the offending key.
RunData prepare_data(const RunConfig& config);

std::filesystem::path output_root(const RunConfig& config);

/// Writes the effective config next to a run's artifacts.
void write_config_copy(const RunConfig& config, const std::filesystem::path& dir);

Model<float> make_model(const RunConfig& config);

/// Trains, writes checkpoint.bin, train_log.csv and config.cfg into `dir`,
/// and leaves `model` holding the best checkpoint.
TrainResult train_to_dir(const RunConfig& config, const RunData& data, Model<float>& model,
                         const std::filesystem::path& dir, const TrainHooks& hooks = {});

/// Test-split evaluation with the config's eval spec, optionally with a
/// different shot count. Uses the ("test") substream of the root seed.
EvalReport evaluate_run(const RunConfig& config, const RunData& data, Model<float>& model, std::size_t shot = 0);

/// Trains every variant under identical seeds and evaluates each at 1 and 5
/// shots. Per-variant artifacts go to dir/<variant>/, the table to
/// dir/ablation.csv.
std::vector<AblationRow> ablate_to_dir(const RunConfig& config, const RunData& data, const std::filesystem::path& dir,
                                       const TrainHooks& hooks = {},
                                       const std::function<void(const std::string&)>& progress = {});

/// Variation statistics on the test split with the config's eval spec.
std::vector<VariationReport> analyze_run(const RunConfig& config, const RunData& data, Model<float>& model,
                                         std::size_t episodes = 100);

}  // namespace bifrn
