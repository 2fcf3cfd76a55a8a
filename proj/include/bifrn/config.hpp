#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "bifrn/episodes.hpp"
#include "bifrn/model.hpp"
#include "bifrn/trainer.hpp"

namespace bifrn {

enum class DatasetKind { synthetic, image_folder };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::synthetic;
  std::string path;      // image_folder root
  std::string manifest;  // image_folder split manifest
  SplitRatios ratios;    // synthetic only; image folders take splits from the manifest
  /// Feature samples use model.feature_rows x model.channels; image samples
  /// use model.image_size.
  SyntheticConfig synthetic;
};

struct EvalConfig {
  std::size_t way = 5;
  std::size_t shot = 1;
  std::size_t query = 15;
  std::size_t tasks = 1000;
};

/// Everything a run needs. Parsed from flat `key = value` text:
///
///   seed = 7                      # mandatory
///   dataset.synthetic.sigma_between = 1.0
///   model.variant = full
///   train.epochs = 120
///
/// `#` starts a comment. Keys are listed by `config_keys()`.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  EpisodeSpec eval_spec() const { return {eval.way, eval.shot, eval.query, Split::novel}; }
};

/// Parses `text` then applies `overrides` ("key=value") in order. Every
/// problem raises ConfigError naming the key and, for file input, the line.
RunConfig parse_run_config(std::string_view text, std::span<const std::string> overrides = {});

RunConfig load_run_config(const std::string& path, std::span<const std::string> overrides = {});

/// Canonical text listing every key; parse_run_config(to_text(c)) == c.
std::string to_text(const RunConfig& config);

std::span<const std::string_view> config_keys();

}  // namespace bifrn
