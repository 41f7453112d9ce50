#pragma once

// Run configuration: one YAML file with a section per pipeline stage, plus
// "section.key=value" overrides. The effective configuration can be written
// back out in a fixed key order.

#include <yaml-cpp/yaml.h>

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "woundseg/augment.hpp"
#include "woundseg/core/error.hpp"
#include "woundseg/core/manifest.hpp"
#include "woundseg/core/random.hpp"
#include "woundseg/phantom.hpp"
#include "woundseg/trainer.hpp"
#include "woundseg/unet.hpp"

namespace woundseg::config {

struct EvalConfig {
  Split split = Split::test;
  double threshold = 0.5;
  double overlay_alpha = 0.5;
};

struct IntensityConfig {
  std::optional<Split> split;  // all splits when unset
  bool partial_layer = true;
};

struct SelectConfig {
  std::optional<Split> split = Split::train;
  int k = 10;
  int dims = 16;
};

struct PathsConfig {
  std::string manifest;
  std::string checkpoint;
};

struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  phantom::DatasetSpec phantom;
  std::array<double, 3> splits{0.8, 0.2, 0.0};
  augment::AugmentConfig augment;
  unet::UNetConfig model;
  train::TrainConfig trainer;
  EvalConfig eval;
  IntensityConfig intensity;
  SelectConfig select;
  PathsConfig paths;
};

// Per-stage seeds fan out from the global seed.
enum class Stage : std::uint64_t { phantom = 1, split = 2, model_init = 3, trainer = 4 };

inline std::uint64_t stage_seed(const RunConfig& c, Stage s) {
  return derive_seed(c.seed, static_cast<std::uint64_t>(s));
}

namespace detail {

// Shortest text that parses back to the same double.
inline std::string fmt_double(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string split_or_all(const std::optional<Split>& s) { return s ? to_string(*s) : "all"; }

inline std::optional<Split> parse_split_or_all(const std::string& s) {
  if (s == "all") return std::nullopt;
  return parse_split(s);
}

struct Binding {
  std::string section;
  std::string key;
  std::function<void(const YAML::Node&)> set;
  std::function<std::string()> show;
};

class Registry {
 public:
  explicit Registry(RunConfig& c) { bind_all(c); }

  const Binding* find(const std::string& section, const std::string& key) const {
    for (const auto& b : bindings_)
      if (b.section == section && b.key == key) return &b;
    return nullptr;
  }
  bool has_section(const std::string& section) const {
    for (const auto& b : bindings_)
      if (b.section == section) return true;
    return false;
  }
  const std::vector<Binding>& all() const { return bindings_; }

 private:
  template <class V>
  void scalar(const std::string& sec, const std::string& key, V& field) {
    bindings_.push_back({sec, key, [&field](const YAML::Node& n) { field = n.as<V>(); },
                         [&field]() {
                           if constexpr (std::is_same_v<V, double>) return fmt_double(field);
                           else if constexpr (std::is_same_v<V, bool>) return std::string(field ? "true" : "false");
                           else return std::to_string(field);
                         }});
  }

  void range(const std::string& sec, const std::string& key, phantom::Range<double>& r) {
    bindings_.push_back({sec, key,
                         [&r](const YAML::Node& n) {
                           const auto v = n.as<std::vector<double>>();
                           if (v.size() != 2) throw ConfigError("expected [lo, hi]");
                           r = {v[0], v[1]};
                         },
                         [&r]() { return "[" + fmt_double(r.lo) + ", " + fmt_double(r.hi) + "]"; }});
  }

  template <class E>
  void enumeration(const std::string& sec, const std::string& key, E& field, std::function<E(const std::string&)> parse,
                   std::function<std::string(const E&)> show) {
    bindings_.push_back({sec, key, [&field, parse](const YAML::Node& n) { field = parse(n.as<std::string>()); },
                         [&field, show]() { return show(field); }});
  }

  void bind_all(RunConfig& c) {
    scalar("", "seed", c.seed);
    scalar("", "threads", c.threads);

    auto& p = c.phantom;
    scalar("phantom", "width", p.width);
    scalar("phantom", "height", p.height);
    scalar("phantom", "patients", p.n_patients);
    scalar("phantom", "scans_per_patient", p.scans_per_patient);
    scalar("phantom", "frames_per_scan", p.frames_per_scan);
    scalar("phantom", "speckle_sigma", p.speckle_sigma);
    range("phantom", "semi_axis_a", p.semi_axis_a);
    range("phantom", "semi_axis_b", p.semi_axis_b);
    range("phantom", "perturbation", p.perturbation);
    range("phantom", "center_darkening", p.center_darkening);
    range("phantom", "rim_brightening", p.rim_brightening);
    scalar("phantom", "halo_width", p.halo_width);
    scalar("phantom", "bone_probability", p.bone_probability);
    range("phantom", "bone_depth_fraction", p.bone_depth_fraction);
    scalar("phantom", "bone_shadow_attenuation", p.bone_shadow_attenuation);
    scalar("phantom", "wound_probability", p.wound_probability);
    range("phantom", "layer_jitter", p.layer_jitter);
    scalar("phantom", "jitter_center_px", p.jitter_center_px);
    scalar("phantom", "jitter_axis_fraction", p.jitter_axis_fraction);

    scalar("splits", "train", c.splits[0]);
    scalar("splits", "val", c.splits[1]);
    scalar("splits", "test", c.splits[2]);

    auto& a = c.augment;
    scalar("augment", "brightness", a.brightness_enabled);
    scalar("augment", "brightness_min", a.brightness_min);
    scalar("augment", "brightness_max", a.brightness_max);
    scalar("augment", "noise", a.noise_enabled);
    scalar("augment", "noise_sigma_min", a.noise_sigma_min);
    scalar("augment", "noise_sigma_max", a.noise_sigma_max);
    scalar("augment", "contrast", a.contrast_enabled);
    scalar("augment", "contrast_min", a.contrast_min);
    scalar("augment", "contrast_max", a.contrast_max);
    scalar("augment", "rotation", a.rotation_enabled);
    scalar("augment", "rotation_min_deg", a.rotation_min_deg);
    scalar("augment", "rotation_max_deg", a.rotation_max_deg);
    scalar("augment", "flip", a.flip_enabled);
    scalar("augment", "flip_probability", a.flip_probability);

    scalar("model", "levels", c.model.levels);
    scalar("model", "base_channels", c.model.base_channels);
    scalar("model", "leaky_slope", c.model.leaky_slope);

    auto& t = c.trainer;
    scalar("trainer", "lr0", t.lr0);
    scalar("trainer", "gamma", t.gamma);
    scalar("trainer", "step_size", t.step_size);
    scalar("trainer", "batch_size", t.batch_size);
    scalar("trainer", "max_epochs", t.max_epochs);
    scalar("trainer", "patience", t.patience);
    scalar("trainer", "min_delta", t.min_delta);
    scalar("trainer", "early_stopping", t.early_stopping);
    scalar("trainer", "input_width", t.input_width);
    scalar("trainer", "input_height", t.input_height);
    enumeration<train::LossKind>("trainer", "loss", t.loss, train::parse_loss_kind,
                                 [](const train::LossKind& k) { return std::string(train::to_string(k)); });
    enumeration<augment::NormMode>("trainer", "normalization", t.norm, augment::parse_norm_mode,
                                   [](const augment::NormMode& m) { return std::string(augment::to_string(m)); });

    enumeration<Split>("eval", "split", c.eval.split, parse_split,
                       [](const Split& s) { return std::string(to_string(s)); });
    scalar("eval", "threshold", c.eval.threshold);
    scalar("eval", "overlay_alpha", c.eval.overlay_alpha);

    enumeration<std::optional<Split>>("intensity", "split", c.intensity.split, parse_split_or_all, split_or_all);
    scalar("intensity", "partial_layer", c.intensity.partial_layer);

    enumeration<std::optional<Split>>("select", "split", c.select.split, parse_split_or_all, split_or_all);
    scalar("select", "k", c.select.k);
    scalar("select", "dims", c.select.dims);

    bindings_.push_back({"paths", "manifest", [&c](const YAML::Node& n) { c.paths.manifest = n.as<std::string>(); },
                         [&c]() { return YAML_quote(c.paths.manifest); }});
    bindings_.push_back({"paths", "checkpoint",
                         [&c](const YAML::Node& n) { c.paths.checkpoint = n.as<std::string>(); },
                         [&c]() { return YAML_quote(c.paths.checkpoint); }});
  }

  static std::string YAML_quote(const std::string& s) {
    YAML::Emitter e;
    e << YAML::DoubleQuoted << s;
    return e.c_str();
  }

  std::vector<Binding> bindings_;
};

inline std::string where(const std::string& source, const YAML::Mark& mark) {
  if (mark.is_null()) return source;
  return source + ":" + std::to_string(mark.line + 1) + ":" + std::to_string(mark.column + 1);
}

inline std::string dotted(const std::string& section, const std::string& key) {
  return section.empty() ? key : section + "." + key;
}

inline void apply_value(const Binding& b, const YAML::Node& value, const std::string& location) {
  try {
    b.set(value);
  } catch (const YAML::Exception& e) {
    throw ConfigError(location + ": invalid value for '" + dotted(b.section, b.key) + "': " + e.msg);
  } catch (const Error& e) {
    throw ConfigError(location + ": invalid value for '" + dotted(b.section, b.key) + "': " + e.what());
  }
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
  double sum = 0.0;
  for (double f : c.splits) {
    if (f < 0.0) throw ConfigError("splits: fractions must be >= 0");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("splits: fractions must sum to 1");
  try {
    augment::validate(c.augment);
    unet::validate(c.model);
    train::validate(c.trainer);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (!(c.eval.threshold > 0.0 && c.eval.threshold < 1.0)) throw ConfigError("eval.threshold must be in (0, 1)");
  if (!(c.eval.overlay_alpha >= 0.0 && c.eval.overlay_alpha <= 1.0))
    throw ConfigError("eval.overlay_alpha must be in [0, 1]");
  if (c.select.k < 1) throw ConfigError("select.k must be >= 1");
  if (c.select.dims < 1) throw ConfigError("select.dims must be >= 1");
}

// Merges a parsed YAML document into `c`. `source` names the input in errors.
inline void apply_document(RunConfig& c, const YAML::Node& root, const std::string& source) {
  if (!root || root.IsNull()) return;
  if (!root.IsMap()) throw ConfigError(detail::where(source, root.Mark()) + ": top level must be a mapping");
  detail::Registry reg(c);
  for (const auto& item : root) {
    const auto name = item.first.as<std::string>();
    const auto loc = detail::where(source, item.first.Mark());
    if (const auto* b = reg.find("", name)) {
      detail::apply_value(*b, item.second, detail::where(source, item.second.Mark()));
      continue;
    }
    if (!reg.has_section(name)) throw ConfigError(loc + ": unknown section '" + name + "'");
    if (!item.second.IsMap()) throw ConfigError(loc + ": section '" + name + "' must be a mapping");
    for (const auto& kv : item.second) {
      const auto key = kv.first.as<std::string>();
      const auto* b = reg.find(name, key);
      if (!b) throw ConfigError(detail::where(source, kv.first.Mark()) + ": unknown key '" + name + "." + key + "'");
      detail::apply_value(*b, kv.second, detail::where(source, kv.second.Mark()));
    }
  }
}

inline RunConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  RunConfig c;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(detail::where(source, e.mark) + ": " + e.msg);
  }
  apply_document(c, root, source);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.string());
}

// "section.key=value" (or "seed=7" for top-level keys).
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  const auto dot = path.find('.');
  const std::string section = dot == std::string::npos ? "" : path.substr(0, dot);
  const std::string key = dot == std::string::npos ? path : path.substr(dot + 1);
  detail::Registry reg(c);
  const auto* b = reg.find(section, key);
  if (!b) throw ConfigError("override '" + assignment + "': unknown key '" + path + "'");
  YAML::Node node;
  try {
    node = YAML::Load(value);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("override '" + assignment + "': " + e.msg);
  }
  detail::apply_value(*b, node, "override '" + assignment + "'");
}

inline std::string to_yaml(const RunConfig& c) {
  RunConfig copy = c;
  detail::Registry reg(copy);
  std::string out, current = "\x01";
  for (const auto& b : reg.all()) {
    if (b.section != current) {
      current = b.section;
      if (!current.empty()) out += "\n" + current + ":\n";
    }
    out += (current.empty() ? "" : "  ") + b.key + ": " + b.show() + "\n";
  }
  return out;
}

inline void save_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << to_yaml(c);
}

// Dataset spec with its seed derived from the global one.
inline phantom::DatasetSpec dataset_spec(const RunConfig& c) {
  phantom::DatasetSpec ds = c.phantom;
  ds.split_fractions = c.splits;
  ds.seed = stage_seed(c, Stage::phantom);
  return ds;
}

inline train::TrainConfig trainer_config(const RunConfig& c) {
  train::TrainConfig t = c.trainer;
  t.seed = stage_seed(c, Stage::trainer);
  t.threshold = c.eval.threshold;
  return t;
}

}  // namespace woundseg::config
