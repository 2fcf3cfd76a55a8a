// Command-line entry point: train, eval, ablate, analyze, gradcheck.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bifrn/errors.hpp"
#include "bifrn/gradcheck.hpp"
#include "bifrn/pipeline.hpp"

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kConfigError = 2;

struct Options {
  std::string config;
  std::string checkpoint;
  std::vector<std::string> overrides;
  std::size_t episodes = 100;
  std::uint64_t seed = 0;
  bool quiet = false;
};

bifrn::TrainHooks console_hooks(const Options& opt, std::size_t epochs) {
  bifrn::TrainHooks hooks;
  hooks.warn = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  if (!opt.quiet) {
    hooks.on_epoch = [epochs](const bifrn::LogRow& row) {
      std::fprintf(stderr, "epoch %zu/%zu  loss %.4f  lr %.3g  tau %.3f", row.epoch, epochs, row.loss, row.lr, row.tau);
      if (row.val_acc) std::fprintf(stderr, "  val %.4f", *row.val_acc);
      std::fputc('\n', stderr);
    };
  }
  return hooks;
}

void write_csv(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw bifrn::IoError("cannot write " + path.string());
  body(out);
}

int cmd_train(const Options& opt) {
  const auto config = bifrn::load_run_config(opt.config, opt.overrides);
  const auto data = bifrn::prepare_data(config);
  const auto dir = bifrn::output_root(config);
  auto model = bifrn::make_model(config);
  const auto result = bifrn::train_to_dir(config, data, model, dir, console_hooks(opt, config.train.epochs));
  std::cout << "best val accuracy " << bifrn::exact(result.best_val_acc) << " at epoch " << result.best_epoch << '\n'
            << "wrote " << (dir / "checkpoint.bin").string() << '\n';
  return 0;
}

int cmd_eval(const Options& opt) {
  const auto config = bifrn::load_run_config(opt.config, opt.overrides);
  const auto data = bifrn::prepare_data(config);
  const auto dir = bifrn::output_root(config);
  auto model = bifrn::make_model(config);
  model.load_checkpoint(bifrn::Checkpoint::load(opt.checkpoint));
  const auto report = bifrn::evaluate_run(config, data, model);
  bifrn::write_config_copy(config, dir);
  write_csv(dir / "eval.csv", [&](std::ostream& out) { bifrn::write_eval_csv(out, report); });
  std::cout << config.eval.way << "-way " << config.eval.shot << "-shot over " << report.tasks()
            << " tasks: " << bifrn::exact(report.mean) << " +- " << bifrn::exact(report.ci95) << '\n';
  return 0;
}

int cmd_ablate(const Options& opt) {
  const auto config = bifrn::load_run_config(opt.config, opt.overrides);
  const auto data = bifrn::prepare_data(config);
  const auto dir = bifrn::output_root(config);
  Options quiet = opt;
  quiet.quiet = true;
  bifrn::ablate_to_dir(config, data, dir, console_hooks(quiet, config.train.epochs),
                       [](const std::string& msg) { std::cerr << msg << '\n'; });
  std::cout << "wrote " << (dir / "ablation.csv").string() << '\n';
  return 0;
}

int cmd_analyze(const Options& opt) {
  const auto config = bifrn::load_run_config(opt.config, opt.overrides);
  const auto data = bifrn::prepare_data(config);
  const auto dir = bifrn::output_root(config);
  auto model = bifrn::make_model(config);
  model.load_checkpoint(bifrn::Checkpoint::load(opt.checkpoint));
  const auto reports = bifrn::analyze_run(config, data, model, opt.episodes);
  bifrn::write_config_copy(config, dir);
  write_csv(dir / "variation.csv", [&](std::ostream& out) { bifrn::write_variation_csv(out, reports); });
  bifrn::write_variation_csv(std::cout, reports);
  return 0;
}

int cmd_gradcheck(const Options& opt) {
  const auto results = bifrn::run_gradchecks(opt.seed);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-4s %-52s rel err %.3e\n", r.passed ? "ok" : "FAIL", r.name.c_str(), r.max_rel_error);
    ok = ok && r.passed;
  }
  std::printf("%zu checks, %s\n", results.size(), ok ? "all passed" : "FAILURES");
  return ok ? 0 : kRuntimeFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot fine-grained classification by bi-directional feature reconstruction"};
  app.require_subcommand(1);
  Options opt;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("config", opt.config, "run config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--set", opt.overrides, "override a config key (key=value), repeatable");
  };
  auto* train = app.add_subcommand("train", "episodic training; writes checkpoint.bin and train_log.csv");
  add_config(train);
  train->add_flag("--quiet", opt.quiet, "no per-epoch progress");
  auto* eval = app.add_subcommand("eval", "test-split evaluation; writes eval.csv");
  add_config(eval);
  eval->add_option("checkpoint", opt.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  auto* ablate = app.add_subcommand("ablate", "train and evaluate every variant; writes ablation.csv");
  add_config(ablate);
  auto* analyze = app.add_subcommand("analyze", "intra/inter-class variation per feature stage; writes variation.csv");
  add_config(analyze);
  analyze->add_option("checkpoint", opt.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  analyze->add_option("--episodes", opt.episodes, "episodes to collect features from")->check(CLI::PositiveNumber);
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gradcheck->add_option("--seed", opt.seed, "seed for the random test inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*train) return cmd_train(opt);
    if (*eval) return cmd_eval(opt);
    if (*ablate) return cmd_ablate(opt);
    if (*analyze) return cmd_analyze(opt);
    if (*gradcheck) return cmd_gradcheck(opt);
  } catch (const bifrn::ConfigError& e) {
    std::cerr << "config error";
    if (!e.key().empty()) std::cerr << " [" << e.key() << "]";
    std::cerr << ": " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kRuntimeFailure;
}
