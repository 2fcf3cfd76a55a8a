#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bifrn/model.hpp"
#include "bifrn/rng.hpp"
#include "bifrn/types.hpp"

namespace bifrn {

enum class SampleKind { features, images };

/// Immutable collection of samples. Feature samples are r x d rows;
/// image samples are channel-major C x S x S pixels in [0, 1].
struct Dataset {
  SampleKind kind = SampleKind::features;
  std::size_t rows = 0;   // r (features)
  std::size_t width = 0;  // d (features)
  std::size_t channels = 3;
  std::size_t image_size = 0;
  std::vector<std::vector<float>> samples;
  std::vector<std::size_t> labels;  // global class id per sample
  std::vector<std::string> class_names;

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t sample_size() const;
  /// Sample indices grouped by class id.
  std::vector<std::vector<std::size_t>> by_class() const;
};

struct SplitRatios {
  double base = 0.5;
  double val = 0.25;
  double novel = 0.25;
};

/// Disjoint class-id partition.
struct ClassSplits {
  std::vector<std::size_t> base, val, novel;

  const std::vector<std::size_t>& get(Split s) const;
};

/// Shuffles class ids with `seed` and cuts them into base/val/novel. Sizes
/// are floor(n * base), floor(n * val) and the remainder for novel.
ClassSplits make_splits(std::size_t num_classes, const SplitRatios& ratios, std::uint64_t seed);

struct EpisodeSpec {
  std::size_t way = 5;
  std::size_t shot = 1;
  std::size_t queries = 15;  // per class
  Split split = Split::novel;

  void validate() const;
};

struct Episode {
  EpisodeSpec spec;
  std::vector<std::size_t> support;        // class-major, `shot` per class
  std::vector<std::size_t> query;          // class-major, `queries` per class
  std::vector<std::size_t> support_labels;  // local 0..way-1
  std::vector<std::size_t> query_labels;
  std::vector<std::size_t> class_map;  // local label -> global class id
};

/// Draws `way` classes uniformly from `pool`, then `shot + queries` distinct
/// samples per class without replacement.
Episode sample_episode(const EpisodeSpec& spec, const Dataset& data, const std::vector<std::size_t>& pool, Rng& rng);

/// Same, reusing a precomputed Dataset::by_class() grouping.
Episode sample_episode(const EpisodeSpec& spec, const std::vector<std::vector<std::size_t>>& by_class,
                       const std::vector<std::size_t>& pool, Rng& rng);

struct AugmentConfig {
  bool enabled = false;
  double flip_probability = 0.5;
  double jitter = 0.2;  // brightness/contrast factors drawn from [1 - j, 1 + j]
};

/// Horizontal flip plus brightness/contrast jitter, clipped to [0, 1].
std::vector<float> augment_image(const std::vector<float>& pixels, std::size_t channels, std::size_t size,
                                 const AugmentConfig& config, Rng& rng);

/// Stacks an episode's samples (supports, then queries) into network input.
/// `augment_rng` is only consulted for image data when augmentation is on.
template <typename T>
EpisodeBatch<T> make_batch(const Dataset& data, const Episode& episode, const AugmentConfig& augment = {},
                           Rng* augment_rng = nullptr);

struct SyntheticConfig {
  std::size_t classes = 30;
  std::size_t samples_per_class = 40;
  SampleKind kind = SampleKind::features;
  std::size_t rows = 4;         // r
  std::size_t width = 64;       // d
  std::size_t image_size = 32;
  double sigma_between = 1.0;   // spread of class templates
  double sigma_within = 0.1;    // per-element sample noise around the template
  /// Per-sample offset shared by every local feature of that sample (a
  /// global appearance shift). 0 disables it.
  double sigma_offset = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

Dataset generate_synthetic(const SyntheticConfig& config);

/// Per-class feature templates (r*d values) as drawn by generate_synthetic.
std::vector<std::vector<float>> synthetic_templates(const SyntheticConfig& config);

/// `class_name<TAB>split` per line; blank lines and '#' comments skipped.
std::vector<std::pair<std::string, Split>> parse_manifest(const std::string& text);

/// Loads root/<class>/* for every manifest class, resized to image_size.
/// Returns the dataset and the manifest-defined split.
std::pair<Dataset, ClassSplits> load_image_folder(const std::filesystem::path& root,
                                                  const std::filesystem::path& manifest, std::size_t image_size);

}  // namespace bifrn
