#pragma once

// Adam with a step-decay learning rate, seeded batching with augmentation,
// validation-Dice early stopping and best-checkpoint bookkeeping.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "woundseg/augment.hpp"
#include "woundseg/autodiff/ops.hpp"
#include "woundseg/core/error.hpp"
#include "woundseg/core/image.hpp"
#include "woundseg/core/image_io.hpp"
#include "woundseg/core/manifest.hpp"
#include "woundseg/core/random.hpp"
#include "woundseg/metrics.hpp"
#include "woundseg/unet.hpp"

namespace woundseg::train {

enum class LossKind { bce, dice, bce_dice };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::bce: return "bce";
    case LossKind::dice: return "dice";
    case LossKind::bce_dice: return "bce_dice";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "bce") return LossKind::bce;
  if (s == "dice") return LossKind::dice;
  if (s == "bce_dice" || s == "bce+dice") return LossKind::bce_dice;
  throw ValueError("unknown loss kind '" + s + "'");
}

struct TrainConfig {
  double lr0 = 1e-3;
  double gamma = 0.1;
  int step_size = 10;  // epochs
  int batch_size = 3;
  int max_epochs = 40;
  int patience = 10;       // epochs
  double min_delta = 1e-3;  // on val Dice
  bool early_stopping = true;
  std::optional<double> target_val_dice;  // stop as soon as val Dice reaches it
  int input_width = 0;  // 0 keeps the native frame size
  int input_height = 0;
  LossKind loss = LossKind::bce;
  augment::NormMode norm = augment::NormMode::dataset_stats;
  double threshold = 0.5;
  std::uint64_t seed = 1;
};

inline void validate(const TrainConfig& c) {
  if (!(c.lr0 > 0.0)) throw ConfigError("trainer: lr0 must be > 0");
  if (!(c.gamma > 0.0 && c.gamma <= 1.0)) throw ConfigError("trainer: gamma must be in (0, 1]");
  if (c.step_size < 1) throw ConfigError("trainer: step_size must be >= 1");
  if (c.batch_size < 1) throw ConfigError("trainer: batch_size must be >= 1");
  if (c.max_epochs < 0) throw ConfigError("trainer: max_epochs must be >= 0");
  if (c.patience < 1) throw ConfigError("trainer: patience must be >= 1");
  if (!(c.min_delta >= 0.0)) throw ConfigError("trainer: min_delta must be >= 0");
  if (c.input_width < 0 || c.input_height < 0) throw ConfigError("trainer: input size must be >= 0");
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) throw ConfigError("trainer: threshold must be in (0, 1)");
}

inline double lr_at_epoch(const TrainConfig& c, int epoch) {
  if (epoch < 0) throw ValueError("lr_at_epoch: epoch must be >= 0");
  return c.lr0 * std::pow(c.gamma, std::floor(static_cast<double>(epoch) / c.step_size));
}

// ---- Adam ---------------------------------------------------------------------------

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  AdamHyper hyper;
  std::vector<std::vector<T>> m, v;
  std::uint64_t t = 0;
};

template <class T>
AdamState<T> make_adam_state(std::span<const ad::Tensor<T>> params, AdamHyper hyper = {}) {
  AdamState<T> s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), T(0));
    s.v.emplace_back(p.numel(), T(0));
  }
  return s;
}

// One bias-corrected Adam update of `params` from their accumulated grads.
// A non-finite gradient aborts the step before anything is modified.
template <class T>
void adam_step(std::span<ad::Tensor<T>> params, AdamState<T>& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel())
      throw ShapeError("adam_step: moment shape mismatch for parameter " + std::to_string(i));
    if (params[i].has_grad())
      for (T g : params[i].grad())
        if (!std::isfinite(g)) throw NonFiniteError("adam_step: non-finite gradient in parameter " + std::to_string(i));
  }
  ++state.t;
  const auto& h = state.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    auto g = params[i].grad();
    auto theta = params[i].mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = g[j];
      const double mj = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
      const double vj = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      theta[j] = static_cast<T>(theta[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + h.eps));
    }
  }
}

// ---- samples --------------------------------------------------------------------------

struct Sample {
  std::string id;
  Frame frame;
  BinaryMask mask;
};

inline Sample fit_sample(Sample s, int width, int height) {
  if (width > 0 && height > 0 && (s.frame.width() != width || s.frame.height() != height)) {
    s.frame = resize_bilinear(s.frame, width, height);
    s.mask = resize_nearest(s.mask, width, height);
  }
  return s;
}

inline std::vector<Sample> load_samples(const DatasetManifest& m, Split split, int width = 0, int height = 0) {
  std::vector<Sample> out;
  for (const auto& ref : frames_in_split(m, split)) {
    if (ref.mask.empty()) throw ValueError("frame " + ref.id + " has no mask");
    auto pair = load_pair(ref.image, ref.mask);
    out.push_back(fit_sample({ref.id, std::move(pair.frame), std::move(pair.mask)}, width, height));
  }
  return out;
}

inline augment::NormStats dataset_stats(std::span<const Sample> samples) {
  augment::RunningStats rs;
  for (const auto& s : samples) rs.add(s.frame);
  return rs.stats();
}

template <class T>
ad::Tensor<T> batch_inputs(std::span<const Frame* const> frames, augment::NormMode mode,
                           const augment::NormStats& stats) {
  const int c = augment::channels_for(mode);
  const int h = frames[0]->height(), w = frames[0]->width();
  const std::size_t plane = static_cast<std::size_t>(c) * h * w;
  std::vector<T> values(plane * frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i]->width() != w || frames[i]->height() != h)
      throw ShapeError("trainer: frames in a batch differ in size");
    augment::normalize_into<T>(*frames[i], mode, stats, std::span<T>(values).subspan(i * plane, plane));
  }
  return ad::Tensor<T>::from({static_cast<int>(frames.size()), c, h, w}, std::move(values));
}

template <class T>
ad::Tensor<T> batch_targets(std::span<const BinaryMask* const> masks) {
  const int h = masks[0]->height(), w = masks[0]->width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<T> values(plane * masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i)
    for (std::size_t j = 0; j < plane; ++j) values[i * plane + j] = (*masks[i])[j] ? T(1) : T(0);
  return ad::Tensor<T>::from({static_cast<int>(masks.size()), 1, h, w}, std::move(values));
}

template <class T>
ad::Tensor<T> segmentation_loss(LossKind kind, const ad::Tensor<T>& logits, const ad::Tensor<T>& targets) {
  switch (kind) {
    case LossKind::bce: return ad::bce_with_logits(logits, targets);
    case LossKind::dice: return ad::dice_loss(ad::sigmoid(logits), targets);
    case LossKind::bce_dice:
      return ad::add(ad::bce_with_logits(logits, targets), ad::dice_loss(ad::sigmoid(logits), targets));
  }
  throw ValueError("unknown loss kind");
}

template <class T>
BinaryMask predict(const unet::ModelParams<T>& params, const Frame& frame, augment::NormMode mode,
                   const augment::NormStats& stats, double threshold) {
  ad::NoGradGuard no_grad;
  return unet::predict_mask(params, augment::normalize<T>(frame, mode, stats), threshold);
}

template <class T>
std::vector<metrics::FrameMetrics> evaluate_samples(const unet::ModelParams<T>& params,
                                                    std::span<const Sample> samples, augment::NormMode mode,
                                                    const augment::NormStats& stats, double threshold) {
  std::vector<metrics::FrameMetrics> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(metrics::evaluate(predict(params, s.frame, mode, stats, threshold), s.mask));
  return out;
}

template <class T>
double mean_dice(const unet::ModelParams<T>& params, std::span<const Sample> samples, augment::NormMode mode,
                 const augment::NormStats& stats, double threshold) {
  const auto m = evaluate_samples(params, samples, mode, stats, threshold);
  double s = 0.0;
  for (const auto& f : m) s += f.dice;
  return s / static_cast<double>(m.size());
}

// ---- training loop --------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_dice = 0.0;
  double lr = 0.0;
};

template <class T>
struct TrainResult {
  unet::ModelParams<T> best;
  std::vector<EpochRecord> history;
  augment::NormStats stats;
  double best_val_dice = 0.0;
  int best_epoch = -1;  // -1 when no epoch ran
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

template <class T>
TrainResult<T> train_on_samples(unet::ModelParams<T> params, std::span<const Sample> train_set,
                                std::span<const Sample> val_set, const TrainConfig& cfg,
                                const augment::AugmentConfig& aug, const EpochCallback& on_epoch = {}) {
  validate(cfg);
  augment::validate(aug);
  if (train_set.empty()) throw ValueError("trainer: training split is empty");
  if (val_set.empty()) throw ValueError("trainer: validation split is empty");

  TrainResult<T> r;
  r.stats = cfg.norm == augment::NormMode::dataset_stats ? dataset_stats(train_set) : augment::NormStats{};
  if (cfg.norm == augment::NormMode::dataset_stats && !(r.stats.std > 0.0))
    throw ValueError("trainer: training frames have zero intensity variance");
  r.best = params.clone();
  if (cfg.max_epochs == 0) return r;

  auto state = make_adam_state<T>(std::span<const ad::Tensor<T>>(params.tensors));
  std::vector<std::size_t> order(train_set.size());
  double reference = -1.0;  // val Dice that the patience window measures against
  int since_improvement = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5348554646ull + static_cast<std::uint64_t>(epoch)));
    shuffle_in_place(order, shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<augment::Pair> pairs;
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = train_set[order[i]];
        const std::uint64_t seed =
            derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)), static_cast<std::uint64_t>(order[i]));
        pairs.push_back(augment::augment_pair(s.frame, s.mask, aug, seed));
      }
      std::vector<const Frame*> frames;
      std::vector<const BinaryMask*> masks;
      for (const auto& p : pairs) {
        frames.push_back(&p.frame);
        masks.push_back(&p.mask);
      }
      const auto x = batch_inputs<T>(frames, cfg.norm, r.stats);
      const auto y = batch_targets<T>(masks);
      const auto loss = segmentation_loss(cfg.loss, unet::forward(params, x), y);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) throw NonFiniteError("trainer: non-finite loss at epoch " + std::to_string(epoch));
      params.zero_grad();
      ad::backward(loss);
      adam_step<T>(params.tensors, state, lr);
      loss_sum += lv * static_cast<double>(end - start);
    }

    EpochRecord rec{epoch, loss_sum / static_cast<double>(train_set.size()),
                    mean_dice(params, val_set, cfg.norm, r.stats, cfg.threshold), lr};
    r.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (r.best_epoch < 0 || rec.val_dice > r.best_val_dice) {
      r.best_val_dice = rec.val_dice;
      r.best_epoch = epoch;
      r.best = params.clone();
    }
    if (cfg.target_val_dice && rec.val_dice >= *cfg.target_val_dice) break;
    if (rec.val_dice > reference + cfg.min_delta) {
      reference = rec.val_dice;
      since_improvement = 0;
    } else if (++since_improvement >= cfg.patience && cfg.early_stopping) {
      r.stopped_early = true;
      break;
    }
  }
  return r;
}

// ---- artifacts ------------------------------------------------------------------------

inline std::string history_csv(std::span<const EpochRecord> history) {
  std::string out = "epoch,train_loss,val_dice,lr\n";
  char buf[160];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", h.epoch, h.train_loss, h.val_dice, h.lr);
    out += buf;
  }
  return out;
}

// Everything needed to run a trained model: architecture, normalization and
// input size, stored next to the checkpoint.
struct ModelInfo {
  unet::UNetConfig config;
  augment::NormMode norm = augment::NormMode::dataset_stats;
  augment::NormStats stats;
  int input_width = 0;
  int input_height = 0;
  double threshold = 0.5;
};

inline nlohmann::ordered_json to_json(const ModelInfo& m) {
  nlohmann::ordered_json j;
  j["unet"] = unet::to_json(m.config);
  j["normalization"] = {{"mode", augment::to_string(m.norm)}, {"mean", m.stats.mean}, {"std", m.stats.std}};
  j["input"] = {{"width", m.input_width}, {"height", m.input_height}};
  j["threshold"] = m.threshold;
  return j;
}

inline ModelInfo model_info_from_json(const nlohmann::json& j) {
  try {
    ModelInfo m;
    m.config = unet::config_from_json(j.at("unet"));
    const auto& n = j.at("normalization");
    m.norm = augment::parse_norm_mode(n.at("mode").get<std::string>());
    m.stats = {n.at("mean").get<double>(), n.at("std").get<double>()};
    m.input_width = j.at("input").at("width").get<int>();
    m.input_height = j.at("input").at("height").get<int>();
    m.threshold = j.value("threshold", 0.5);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model description: ") + e.what());
  }
}

// "<dir>/model.bin" pairs with "<dir>/model.json".
inline std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  return p.replace_extension(".json");
}

template <class T>
void save_model(const std::filesystem::path& checkpoint, const unet::ModelParams<T>& params, const ModelInfo& info) {
  unet::save_params(checkpoint, params);
  std::ofstream os(sidecar_path(checkpoint), std::ios::binary);
  if (!os) throw IoError("cannot write " + sidecar_path(checkpoint).string());
  os << to_json(info).dump(2) << '\n';
}

template <class T>
struct LoadedModel {
  unet::ModelParams<T> params;
  ModelInfo info;
};

template <class T>
LoadedModel<T> load_model(const std::filesystem::path& checkpoint) {
  if (!std::filesystem::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint.string());
  const auto side = sidecar_path(checkpoint);
  std::ifstream is(side);
  if (!is) throw IoError("model description not found: " + side.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  }
  ModelInfo info = model_info_from_json(j);
  return {unet::load_params<T>(checkpoint, info.config), info};
}

// Predicts at the model's input size and maps the mask back to the frame size.
template <class T>
BinaryMask predict_frame(const LoadedModel<T>& model, const Frame& frame, std::optional<double> threshold = {}) {
  const auto& info = model.info;
  const bool resize = info.input_width > 0 && info.input_height > 0 &&
                      (frame.width() != info.input_width || frame.height() != info.input_height);
  const Frame in = resize ? resize_bilinear(frame, info.input_width, info.input_height) : frame;
  BinaryMask m = predict(model.params, in, info.norm, info.stats, threshold.value_or(info.threshold));
  return resize ? resize_nearest(m, frame.width(), frame.height()) : m;
}

}  // namespace woundseg::train
