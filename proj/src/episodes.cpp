#include "bifrn/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "bifrn/errors.hpp"

namespace bifrn {

std::size_t Dataset::sample_size() const {
  return kind == SampleKind::features ? rows * width : channels * image_size * image_size;
}

std::vector<std::vector<std::size_t>> Dataset::by_class() const {
  std::vector<std::vector<std::size_t>> groups(num_classes());
  for (std::size_t i = 0; i < labels.size(); ++i) groups.at(labels[i]).push_back(i);
  return groups;
}

const std::vector<std::size_t>& ClassSplits::get(Split s) const {
  switch (s) {
    case Split::base: return base;
    case Split::val: return val;
    case Split::novel: return novel;
  }
  return novel;
}

ClassSplits make_splits(std::size_t num_classes, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.base <= 0 || ratios.val <= 0 || ratios.novel <= 0 ||
      std::abs(ratios.base + ratios.val + ratios.novel - 1.0) > 1e-9) {
    throw ContractError("split ratios must be positive and sum to 1");
  }
  const auto n_base = static_cast<std::size_t>(std::floor(static_cast<double>(num_classes) * ratios.base));
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(num_classes) * ratios.val));
  if (n_base == 0 || n_val == 0 || n_base + n_val >= num_classes) {
    throw SamplingError(std::to_string(num_classes) + " classes are too few for three non-empty splits");
  }
  std::vector<std::size_t> ids(num_classes);
  for (std::size_t i = 0; i < num_classes; ++i) ids[i] = i;
  Rng rng = make_rng(seed, "splits");
  std::shuffle(ids.begin(), ids.end(), rng);
  ClassSplits s;
  s.base.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_base));
  s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_base), ids.begin() + static_cast<std::ptrdiff_t>(n_base + n_val));
  s.novel.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_base + n_val), ids.end());
  for (auto* v : {&s.base, &s.val, &s.novel}) std::sort(v->begin(), v->end());
  return s;
}

void EpisodeSpec::validate() const {
  if (way < 2) throw ContractError("episode way must be >= 2");
  if (shot < 1) throw ContractError("episode shot must be >= 1");
  if (queries < 1) throw ContractError("episode queries must be >= 1");
}

namespace {

// First `k` entries of `items` become a uniform random k-subset in random order.
void partial_shuffle(std::vector<std::size_t>& items, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
    std::swap(items[i], items[pick(rng)]);
  }
}

}  // namespace

Episode sample_episode(const EpisodeSpec& spec, const std::vector<std::vector<std::size_t>>& by_class,
                       const std::vector<std::size_t>& pool, Rng& rng) {
  spec.validate();
  if (pool.size() < spec.way) {
    throw SamplingError("split has " + std::to_string(pool.size()) + " classes, episode needs " +
                        std::to_string(spec.way));
  }
  Episode ep;
  ep.spec = spec;
  // Sorting first makes the draw independent of how the pool is ordered.
  std::vector<std::size_t> classes = pool;
  std::sort(classes.begin(), classes.end());
  partial_shuffle(classes, spec.way, rng);
  ep.class_map.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(spec.way));
  const std::size_t need = spec.shot + spec.queries;
  for (std::size_t local = 0; local < spec.way; ++local) {
    std::vector<std::size_t> members = by_class.at(ep.class_map[local]);
    if (members.size() < need) {
      throw SamplingError("class " + std::to_string(ep.class_map[local]) + " has " + std::to_string(members.size()) +
                          " samples, episode needs " + std::to_string(need));
    }
    partial_shuffle(members, need, rng);
    for (std::size_t j = 0; j < spec.shot; ++j) {
      ep.support.push_back(members[j]);
      ep.support_labels.push_back(local);
    }
    for (std::size_t j = spec.shot; j < need; ++j) {
      ep.query.push_back(members[j]);
      ep.query_labels.push_back(local);
    }
  }
  return ep;
}

Episode sample_episode(const EpisodeSpec& spec, const Dataset& data, const std::vector<std::size_t>& pool, Rng& rng) {
  return sample_episode(spec, data.by_class(), pool, rng);
}

std::vector<float> augment_image(const std::vector<float>& pixels, std::size_t channels, std::size_t size,
                                 const AugmentConfig& config, Rng& rng) {
  std::vector<float> out = pixels;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < config.flip_probability) {
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
          out[(c * size + y) * size + x] = pixels[(c * size + y) * size + (size - 1 - x)];
  }
  std::uniform_real_distribution<double> factor(1.0 - config.jitter, 1.0 + config.jitter);
  const double brightness = factor(rng);
  const double contrast = factor(rng);
  double mean = 0;
  for (float v : out) mean += v;
  mean /= static_cast<double>(out.size());
  for (float& v : out) {
    const double adjusted = ((v - mean) * contrast + mean) * brightness;
    v = static_cast<float>(std::clamp(adjusted, 0.0, 1.0));
  }
  return out;
}

template <typename T>
EpisodeBatch<T> make_batch(const Dataset& data, const Episode& episode, const AugmentConfig& augment, Rng* augment_rng) {
  const std::size_t n = episode.support.size() + episode.query.size();
  const std::size_t size = data.sample_size();
  std::vector<T> values;
  values.reserve(n * size);
  const bool do_augment = augment.enabled && augment_rng && data.kind == SampleKind::images;
  auto append = [&](std::size_t idx) {
    const auto& s = data.samples.at(idx);
    if (do_augment) {
      auto a = augment_image(s, data.channels, data.image_size, augment, *augment_rng);
      values.insert(values.end(), a.begin(), a.end());
    } else {
      values.insert(values.end(), s.begin(), s.end());
    }
  };
  for (std::size_t idx : episode.support) append(idx);
  for (std::size_t idx : episode.query) append(idx);

  EpisodeBatch<T> batch;
  batch.way = episode.spec.way;
  batch.shot = episode.spec.shot;
  batch.query_labels = episode.query_labels;
  if (data.kind == SampleKind::features) {
    batch.inputs = Tensor<T>(Shape{n * data.rows, data.width}, std::move(values));
  } else {
    batch.inputs = Tensor<T>(Shape{n, data.channels, data.image_size, data.image_size}, std::move(values));
  }
  return batch;
}

template EpisodeBatch<float> make_batch(const Dataset&, const Episode&, const AugmentConfig&, Rng*);
template EpisodeBatch<double> make_batch(const Dataset&, const Episode&, const AugmentConfig&, Rng*);

void SyntheticConfig::validate() const {
  if (classes < 3) throw ContractError("synthetic data needs at least 3 classes");
  if (samples_per_class < 1) throw ContractError("synthetic samples_per_class must be >= 1");
  if (!(sigma_between > 0) || !(sigma_within > 0)) throw ContractError("sigma_between and sigma_within must be > 0");
  if (sigma_offset < 0) throw ContractError("sigma_offset must be >= 0");
  if (kind == SampleKind::features && (rows == 0 || width < 2)) throw ContractError("synthetic rows/width too small");
  if (kind == SampleKind::images && image_size < 8) throw ContractError("synthetic image_size must be >= 8");
}

std::vector<std::vector<float>> synthetic_templates(const SyntheticConfig& config) {
  config.validate();
  Rng rng = make_rng(config.seed, "synthetic.templates");
  std::normal_distribution<double> g(0.0, config.sigma_between);
  std::vector<std::vector<float>> templates(config.classes, std::vector<float>(config.rows * config.width));
  for (auto& t : templates)
    for (auto& v : t) v = static_cast<float>(g(rng));
  return templates;
}

namespace {

Dataset synthetic_features(const SyntheticConfig& config) {
  const auto templates = synthetic_templates(config);
  Dataset data;
  data.kind = SampleKind::features;
  data.rows = config.rows;
  data.width = config.width;
  std::normal_distribution<double> noise(0.0, config.sigma_within);
  std::normal_distribution<double> offset(0.0, config.sigma_offset > 0 ? config.sigma_offset : 1.0);
  for (std::size_t c = 0; c < config.classes; ++c) {
    data.class_names.push_back("class_" + std::to_string(c));
    Rng rng = make_rng(config.seed, "synthetic.samples", c);
    for (std::size_t s = 0; s < config.samples_per_class; ++s) {
      std::vector<float> x(templates[c]);
      std::vector<double> shift(config.width, 0.0);
      if (config.sigma_offset > 0) {
        for (auto& v : shift) v = offset(rng);
      }
      for (std::size_t j = 0; j < config.rows; ++j)
        for (std::size_t k = 0; k < config.width; ++k) {
          auto& v = x[j * config.width + k];
          v = static_cast<float>(v + noise(rng) + shift[k]);
        }
      data.samples.push_back(std::move(x));
      data.labels.push_back(c);
    }
  }
  return data;
}

Dataset synthetic_images(const SyntheticConfig& config) {
  Dataset data;
  data.kind = SampleKind::images;
  data.channels = 3;
  data.image_size = config.image_size;
  const std::size_t S = config.image_size, P = std::max<std::size_t>(2, S / 4);
  Rng trng = make_rng(config.seed, "synthetic.templates");
  std::normal_distribution<double> g(0.0, config.sigma_between);
  std::uniform_int_distribution<std::size_t> where(0, S - P);
  struct Motif {
    std::vector<double> patch;
    std::size_t y, x;
  };
  std::vector<Motif> motifs(config.classes);
  for (auto& m : motifs) {
    m.patch.resize(3 * P * P);
    for (auto& v : m.patch) v = g(trng);
    m.y = where(trng);
    m.x = where(trng);
  }
  std::normal_distribution<double> noise(0.0, config.sigma_within);
  std::normal_distribution<double> offset(0.0, config.sigma_offset > 0 ? config.sigma_offset : 1.0);
  for (std::size_t c = 0; c < config.classes; ++c) {
    data.class_names.push_back("class_" + std::to_string(c));
    Rng rng = make_rng(config.seed, "synthetic.samples", c);
    for (std::size_t s = 0; s < config.samples_per_class; ++s) {
      const double shift = config.sigma_offset > 0 ? offset(rng) : 0.0;
      std::vector<float> px(3 * S * S);
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < S; ++y)
          for (std::size_t x = 0; x < S; ++x) {
            double v = 0.5 + shift + noise(rng);
            const auto& m = motifs[c];
            if (y >= m.y && y < m.y + P && x >= m.x && x < m.x + P) {
              v += m.patch[(ch * P + (y - m.y)) * P + (x - m.x)];
            }
            px[(ch * S + y) * S + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
      data.samples.push_back(std::move(px));
      data.labels.push_back(c);
    }
  }
  return data;
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  return config.kind == SampleKind::features ? synthetic_features(config) : synthetic_images(config);
}

std::vector<std::pair<std::string, Split>> parse_manifest(const std::string& text) {
  std::vector<std::pair<std::string, Split>> out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw IoError("manifest line " + std::to_string(lineno) + ": expected 'class<TAB>split'");
    }
    std::string name = line.substr(0, tab);
    Split split;
    try {
      split = parse_split(line.substr(tab + 1));
    } catch (const ContractError&) {
      throw IoError("manifest line " + std::to_string(lineno) + ": unknown split '" + line.substr(tab + 1) + "'");
    }
    // One line per class keeps the three splits disjoint.
    if (!seen.insert(name).second) {
      throw IoError("manifest line " + std::to_string(lineno) + ": class '" + name + "' listed more than once");
    }
    out.emplace_back(std::move(name), split);
  }
  return out;
}

std::pair<Dataset, ClassSplits> load_image_folder(const std::filesystem::path& root,
                                                  const std::filesystem::path& manifest, std::size_t image_size) {
  std::ifstream mf(manifest);
  if (!mf) throw IoError("cannot read manifest " + manifest.string());
  std::stringstream buf;
  buf << mf.rdbuf();
  const auto entries = parse_manifest(buf.str());

  Dataset data;
  data.kind = SampleKind::images;
  data.channels = 3;
  data.image_size = image_size;
  ClassSplits splits;
  for (const auto& [name, split] : entries) {
    const auto dir = root / name;
    if (!std::filesystem::is_directory(dir)) {
      throw IoError("manifest class '" + name + "' has no directory under " + root.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    const std::size_t id = data.class_names.size();
    data.class_names.push_back(name);
    switch (split) {
      case Split::base: splits.base.push_back(id); break;
      case Split::val: splits.val.push_back(id); break;
      case Split::novel: splits.novel.push_back(id); break;
    }
    for (const auto& file : files) {
      cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
      if (bgr.empty()) throw IoError("cannot decode image " + file.string());
      cv::Mat resized, rgb;
      const auto side = static_cast<int>(image_size);
      cv::resize(bgr, resized, cv::Size(side, side), 0, 0, cv::INTER_AREA);
      cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
      std::vector<float> px(3 * image_size * image_size);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          const auto& p = rgb.at<cv::Vec3b>(y, x);
          for (int c = 0; c < 3; ++c) {
            px[(static_cast<std::size_t>(c) * image_size + static_cast<std::size_t>(y)) * image_size +
               static_cast<std::size_t>(x)] = static_cast<float>(p[c]) / 255.0f;
          }
        }
      data.samples.push_back(std::move(px));
      data.labels.push_back(id);
    }
  }
  return {std::move(data), std::move(splits)};
}

}  // namespace bifrn
