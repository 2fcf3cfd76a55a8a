#include "bifrn/pipeline.hpp"

#include <cstdlib>
#include <fstream>

#include "bifrn/errors.hpp"

namespace bifrn {

namespace {

void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  body(out);
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

RunData prepare_data(const RunConfig& config) {
  if (config.dataset.kind == DatasetKind::synthetic) {
    RunData data{generate_synthetic(config.dataset.synthetic), {}};
    data.splits = make_splits(data.dataset.num_classes(), config.dataset.ratios, config.seed);
    return data;
  }
  if (!std::filesystem::is_directory(config.dataset.path)) {
    throw ConfigError("dataset.path", 0, "dataset.path: no such directory '" + config.dataset.path + "'");
  }
  if (!std::filesystem::is_regular_file(config.dataset.manifest)) {
    throw ConfigError("dataset.manifest", 0, "dataset.manifest: no such file '" + config.dataset.manifest + "'");
  }
  auto [dataset, splits] = load_image_folder(config.dataset.path, config.dataset.manifest, config.model.image_size);
  return {std::move(dataset), std::move(splits)};
}

std::filesystem::path output_root(const RunConfig& config) {
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return config.output_dir;
}

void write_config_copy(const RunConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "config.cfg", [&](std::ostream& out) { out << to_text(config); });
}

Model<float> make_model(const RunConfig& config) { return Model<float>(config.model, config.seed); }

TrainResult train_to_dir(const RunConfig& config, const RunData& data, Model<float>& model,
                         const std::filesystem::path& dir, const TrainHooks& hooks) {
  write_config_copy(config, dir);
  TrainResult result = train(model, data.dataset, data.splits, config.train, hooks);
  model.load_checkpoint(result.best);
  result.best.save(dir / "checkpoint.bin");
  write_file(dir / "train_log.csv", [&](std::ostream& out) { write_training_log(out, result.log); });
  return result;
}

EvalReport evaluate_run(const RunConfig& config, const RunData& data, Model<float>& model, std::size_t shot) {
  EpisodeSpec spec = config.eval_spec();
  if (shot) spec.shot = shot;
  return evaluate(model, data.dataset, data.splits.novel, spec, config.eval.tasks, derive_seed(config.seed, "test"),
                  std::string(variant_name(config.model.variant)));
}

std::vector<AblationRow> ablate_to_dir(const RunConfig& config, const RunData& data, const std::filesystem::path& dir,
                                       const TrainHooks& hooks,
                                       const std::function<void(const std::string&)>& progress) {
  write_config_copy(config, dir);
  std::vector<AblationRow> rows;
  for (Variant v : all_variants()) {
    RunConfig vc = config;
    vc.model.variant = v;
    if (progress) progress("training variant " + std::string(variant_name(v)));
    Model<float> model = make_model(vc);
    train_to_dir(vc, data, model, dir / std::string(variant_name(v)), hooks);
    AblationRow row;
    row.variant = v;
    row.one_shot = evaluate_run(vc, data, model, 1);
    row.five_shot = evaluate_run(vc, data, model, 5);
    if (progress) {
      progress(std::string(variant_name(v)) + ": 1-shot " + exact(row.one_shot.mean) + ", 5-shot " +
               exact(row.five_shot.mean));
    }
    rows.push_back(std::move(row));
  }
  write_file(dir / "ablation.csv", [&](std::ostream& out) { write_ablation_csv(out, rows); });
  return rows;
}

std::vector<VariationReport> analyze_run(const RunConfig& config, const RunData& data, Model<float>& model,
                                         std::size_t episodes) {
  return analyze(model, data.dataset, data.splits.novel, config.eval_spec(), episodes,
                 derive_seed(config.seed, "analysis"));
}

}  // namespace bifrn
