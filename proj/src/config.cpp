#include "bifrn/config.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "bifrn/errors.hpp"
#include "bifrn/eval.hpp"

namespace bifrn {

namespace {

// Raised by value parsers; the caller attaches key and line.
struct BadValue {
  std::string message;
};

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(std::string_view v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw BadValue{"expected a non-negative integer, got '" + std::string(v) + "'"};
  return out;
}

std::size_t to_size(std::string_view v, std::size_t min = 0) {
  const auto n = static_cast<std::size_t>(to_u64(v));
  if (n < min) throw BadValue{"must be >= " + std::to_string(min)};
  return n;
}

double to_double(std::string_view v) {
  std::string s(v);
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    throw BadValue{"expected a number, got '" + s + "'"};
  }
  if (used != s.size() || !std::isfinite(out)) throw BadValue{"expected a finite number, got '" + s + "'"};
  return out;
}

double positive(std::string_view v) {
  const double x = to_double(v);
  if (!(x > 0)) throw BadValue{"must be > 0"};
  return x;
}

double non_negative(std::string_view v) {
  const double x = to_double(v);
  if (x < 0) throw BadValue{"must be >= 0"};
  return x;
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw BadValue{"expected true/false, got '" + std::string(v) + "'"};
}

template <typename F>
auto enum_value(F parse, std::string_view v) {
  try {
    return parse(v);
  } catch (const std::exception& e) {
    throw BadValue{e.what()};
  }
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

struct Key {
  std::string_view name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = {
      {"seed", [](RunConfig& c, std::string_view v) { c.seed = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"output_dir",
       [](RunConfig& c, std::string_view v) {
         if (v.empty()) throw BadValue{"must not be empty"};
         c.output_dir = v;
       },
       [](const RunConfig& c) { return c.output_dir; }},

      {"dataset.kind",
       [](RunConfig& c, std::string_view v) {
         if (v == "synthetic") c.dataset.kind = DatasetKind::synthetic;
         else if (v == "image_folder") c.dataset.kind = DatasetKind::image_folder;
         else throw BadValue{"expected synthetic or image_folder, got '" + std::string(v) + "'"};
       },
       [](const RunConfig& c) {
         return std::string(c.dataset.kind == DatasetKind::synthetic ? "synthetic" : "image_folder");
       }},
      {"dataset.path", [](RunConfig& c, std::string_view v) { c.dataset.path = v; },
       [](const RunConfig& c) { return c.dataset.path; }},
      {"dataset.manifest", [](RunConfig& c, std::string_view v) { c.dataset.manifest = v; },
       [](const RunConfig& c) { return c.dataset.manifest; }},
      {"dataset.split_ratios",
       [](RunConfig& c, std::string_view v) {
         std::array<double, 3> r{};
         std::size_t n = 0;
         std::size_t start = 0;
         while (true) {
           const auto comma = v.find(',', start);
           if (n == 3) throw BadValue{"expected three comma-separated ratios"};
           r[n++] = positive(trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start)));
           if (comma == std::string_view::npos) break;
           start = comma + 1;
         }
         if (n != 3) throw BadValue{"expected three comma-separated ratios"};
         if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw BadValue{"ratios must sum to 1"};
         c.dataset.ratios = {r[0], r[1], r[2]};
       },
       [](const RunConfig& c) {
         return exact(c.dataset.ratios.base) + "," + exact(c.dataset.ratios.val) + "," + exact(c.dataset.ratios.novel);
       }},
      {"dataset.synthetic.classes", [](RunConfig& c, std::string_view v) { c.dataset.synthetic.classes = to_size(v, 3); },
       [](const RunConfig& c) { return std::to_string(c.dataset.synthetic.classes); }},
      {"dataset.synthetic.samples_per_class",
       [](RunConfig& c, std::string_view v) { c.dataset.synthetic.samples_per_class = to_size(v, 1); },
       [](const RunConfig& c) { return std::to_string(c.dataset.synthetic.samples_per_class); }},
      {"dataset.synthetic.mode",
       [](RunConfig& c, std::string_view v) {
         if (v == "features") c.dataset.synthetic.kind = SampleKind::features;
         else if (v == "images") c.dataset.synthetic.kind = SampleKind::images;
         else throw BadValue{"expected features or images, got '" + std::string(v) + "'"};
       },
       [](const RunConfig& c) {
         return std::string(c.dataset.synthetic.kind == SampleKind::features ? "features" : "images");
       }},
      {"dataset.synthetic.sigma_between",
       [](RunConfig& c, std::string_view v) { c.dataset.synthetic.sigma_between = positive(v); },
       [](const RunConfig& c) { return exact(c.dataset.synthetic.sigma_between); }},
      {"dataset.synthetic.sigma_within",
       [](RunConfig& c, std::string_view v) { c.dataset.synthetic.sigma_within = positive(v); },
       [](const RunConfig& c) { return exact(c.dataset.synthetic.sigma_within); }},
      {"dataset.synthetic.sigma_offset",
       [](RunConfig& c, std::string_view v) { c.dataset.synthetic.sigma_offset = non_negative(v); },
       [](const RunConfig& c) { return exact(c.dataset.synthetic.sigma_offset); }},

      {"model.backbone",
       [](RunConfig& c, std::string_view v) { c.model.backbone = enum_value(parse_backbone, v); },
       [](const RunConfig& c) { return std::string(backbone_name(c.model.backbone)); }},
      {"model.channels", [](RunConfig& c, std::string_view v) { c.model.channels = to_size(v, 2); },
       [](const RunConfig& c) { return std::to_string(c.model.channels); }},
      {"model.image_size", [](RunConfig& c, std::string_view v) { c.model.image_size = to_size(v, 8); },
       [](const RunConfig& c) { return std::to_string(c.model.image_size); }},
      {"model.feature_rows", [](RunConfig& c, std::string_view v) { c.model.feature_rows = to_size(v, 1); },
       [](const RunConfig& c) { return std::to_string(c.model.feature_rows); }},
      {"model.d_mlp", [](RunConfig& c, std::string_view v) { c.model.d_mlp = to_size(v); },
       [](const RunConfig& c) { return std::to_string(c.model.d_mlp); }},
      {"model.transformer_standard_block",
       [](RunConfig& c, std::string_view v) { c.model.transformer_standard_block = to_bool(v); },
       [](const RunConfig& c) { return bool_text(c.model.transformer_standard_block); }},
      {"model.separate_fmrm_weights",
       [](RunConfig& c, std::string_view v) { c.model.separate_fmrm_weights = to_bool(v); },
       [](const RunConfig& c) { return bool_text(c.model.separate_fmrm_weights); }},
      {"model.normalize_distances",
       [](RunConfig& c, std::string_view v) { c.model.normalize_distances = to_bool(v); },
       [](const RunConfig& c) { return bool_text(c.model.normalize_distances); }},
      {"model.variant", [](RunConfig& c, std::string_view v) { c.model.variant = enum_value(parse_variant, v); },
       [](const RunConfig& c) { return std::string(variant_name(c.model.variant)); }},

      {"train.epochs", [](RunConfig& c, std::string_view v) { c.train.epochs = to_size(v, 1); },
       [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
      {"train.episodes_per_epoch", [](RunConfig& c, std::string_view v) { c.train.episodes_per_epoch = to_size(v, 1); },
       [](const RunConfig& c) { return std::to_string(c.train.episodes_per_epoch); }},
      {"train.way", [](RunConfig& c, std::string_view v) { c.train.episode.way = to_size(v, 2); },
       [](const RunConfig& c) { return std::to_string(c.train.episode.way); }},
      {"train.shot", [](RunConfig& c, std::string_view v) { c.train.episode.shot = to_size(v, 1); },
       [](const RunConfig& c) { return std::to_string(c.train.episode.shot); }},
      {"train.query", [](RunConfig& c, std::string_view v) { c.train.episode.queries = to_size(v, 1); },
       [](const RunConfig& c) { return std::to_string(c.train.episode.queries); }},
      {"train.lr", [](RunConfig& c, std::string_view v) { c.train.lr.initial = positive(v); },
       [](const RunConfig& c) { return exact(c.train.lr.initial); }},
      {"train.lr_decay",
       [](RunConfig& c, std::string_view v) {
         const double f = positive(v);
         if (f > 1) throw BadValue{"must be in (0, 1]"};
         c.train.lr.factor = f;
       },
       [](const RunConfig& c) { return exact(c.train.lr.factor); }},
      {"train.lr_period", [](RunConfig& c, std::string_view v) { c.train.lr.period = to_size(v, 1); },
       [](const RunConfig& c) { return std::to_string(c.train.lr.period); }},
      {"train.momentum",
       [](RunConfig& c, std::string_view v) {
         const double m = non_negative(v);
         if (m >= 1) throw BadValue{"must be in [0, 1)"};
         c.train.momentum = m;
       },
       [](const RunConfig& c) { return exact(c.train.momentum); }},
      {"train.weight_decay", [](RunConfig& c, std::string_view v) { c.train.weight_decay = non_negative(v); },
       [](const RunConfig& c) { return exact(c.train.weight_decay); }},
      {"train.eval_period", [](RunConfig& c, std::string_view v) { c.train.eval_period = to_size(v, 1); },
       [](const RunConfig& c) { return std::to_string(c.train.eval_period); }},
      {"train.val_episodes", [](RunConfig& c, std::string_view v) { c.train.val_episodes = to_size(v, 1); },
       [](const RunConfig& c) { return std::to_string(c.train.val_episodes); }},
      {"train.augment", [](RunConfig& c, std::string_view v) { c.train.augment.enabled = to_bool(v); },
       [](const RunConfig& c) { return bool_text(c.train.augment.enabled); }},

      {"eval.way", [](RunConfig& c, std::string_view v) { c.eval.way = to_size(v, 2); },
       [](const RunConfig& c) { return std::to_string(c.eval.way); }},
      {"eval.shot", [](RunConfig& c, std::string_view v) { c.eval.shot = to_size(v, 1); },
       [](const RunConfig& c) { return std::to_string(c.eval.shot); }},
      {"eval.query", [](RunConfig& c, std::string_view v) { c.eval.query = to_size(v, 1); },
       [](const RunConfig& c) { return std::to_string(c.eval.query); }},
      {"eval.tasks", [](RunConfig& c, std::string_view v) { c.eval.tasks = to_size(v, 1); },
       [](const RunConfig& c) { return std::to_string(c.eval.tasks); }},
  };
  return keys;
}

const Key& find_key(std::string_view name, std::size_t line) {
  for (const auto& k : key_table()) {
    if (k.name == name) return k;
  }
  throw ConfigError(std::string(name), line,
                    (line ? "line " + std::to_string(line) + ": " : std::string("--set: ")) + "unknown key '" +
                        std::string(name) + "'");
}

void assign(RunConfig& config, std::string_view key, std::string_view value, std::size_t line) {
  const Key& k = find_key(key, line);
  try {
    k.set(config, value);
  } catch (const BadValue& e) {
    throw ConfigError(std::string(key), line,
                      (line ? "line " + std::to_string(line) + ": " : std::string("--set: ")) + std::string(key) + ": " +
                          e.message);
  }
}

void cross_check(RunConfig& c) {
  // Derived fields: the same root seed drives every component.
  c.train.seed = c.seed;
  c.dataset.synthetic.seed = c.seed;
  c.dataset.synthetic.rows = c.model.feature_rows;
  c.dataset.synthetic.width = c.model.channels;
  c.dataset.synthetic.image_size = c.model.image_size;
  c.train.val_episode = EpisodeSpec{c.eval.way, c.eval.shot, c.eval.query, Split::val};

  const bool features = c.dataset.kind == DatasetKind::synthetic && c.dataset.synthetic.kind == SampleKind::features;
  if (features && c.model.backbone != BackboneKind::bypass) {
    throw ConfigError("model.backbone", 0, "model.backbone: feature-row data needs backbone 'bypass'");
  }
  if (!features && c.model.backbone == BackboneKind::bypass) {
    throw ConfigError("model.backbone", 0, "model.backbone: image data needs backbone 'conv4' or 'resnet'");
  }
  if (c.dataset.kind == DatasetKind::image_folder) {
    if (c.dataset.path.empty()) throw ConfigError("dataset.path", 0, "dataset.path: required for image_folder data");
    if (c.dataset.manifest.empty()) {
      throw ConfigError("dataset.manifest", 0, "dataset.manifest: required for image_folder data");
    }
  }
  if (c.model.backbone == BackboneKind::resnet && c.model.channels % 4 != 0) {
    throw ConfigError("model.channels", 0, "model.channels: resnet widths need a multiple of 4");
  }
}

}  // namespace

std::span<const std::string_view> config_keys() {
  static const std::vector<std::string_view> names = [] {
    std::vector<std::string_view> out;
    for (const auto& k : key_table()) out.push_back(k.name);
    return out;
  }();
  return names;
}

RunConfig parse_run_config(std::string_view text, std::span<const std::string> overrides) {
  RunConfig config;
  bool has_seed = false;
  std::map<std::string, std::size_t, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view line = text.substr(pos, end == std::string_view::npos ? text.npos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(line), line_no,
                        "line " + std::to_string(line_no) + ": expected 'key = value', got '" + std::string(line) + "'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (auto it = seen.find(key); it != seen.end()) {
      throw ConfigError(std::string(key), line_no,
                        "line " + std::to_string(line_no) + ": key '" + std::string(key) + "' already set on line " +
                            std::to_string(it->second));
    }
    seen.emplace(std::string(key), line_no);
    assign(config, key, value, line_no);
    has_seed = has_seed || key == "seed";
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError(o, 0, "--set: expected key=value, got '" + o + "'");
    const auto key = trim(std::string_view(o).substr(0, eq));
    assign(config, key, trim(std::string_view(o).substr(eq + 1)), 0);
    has_seed = has_seed || key == "seed";
  }
  if (!has_seed) throw ConfigError("seed", 0, "missing mandatory key 'seed'");
  cross_check(config);
  return config;
}

RunConfig load_run_config(const std::string& path, std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", 0, "cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), overrides);
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& k : key_table()) {
    out += std::string(k.name) + " = " + k.get(config) + "\n";
  }
  return out;
}

}  // namespace bifrn
