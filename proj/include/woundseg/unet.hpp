#pragma once

// Four-level U-Net with LeakyReLU activations, "same" padding throughout and
// nearest-neighbor upsampling followed by a 3x3 conv in the decoder.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "woundseg/autodiff/checkpoint.hpp"
#include "woundseg/autodiff/ops.hpp"
#include "woundseg/autodiff/tensor.hpp"
#include "woundseg/core/image.hpp"
#include "woundseg/core/random.hpp"

namespace woundseg::unet {

struct UNetConfig {
  int levels = 4;
  int base_channels = 8;
  double leaky_slope = 0.01;
  int in_channels = 1;
  int out_channels = 1;

  int channels_at(int level) const { return base_channels << level; }
  // Spatial dims must be divisible by this.
  int size_divisor() const { return 1 << (levels - 1); }
};

inline void validate(const UNetConfig& c) {
  if (c.levels < 1) throw ValueError("unet: levels must be >= 1");
  if (c.base_channels < 1) throw ValueError("unet: base_channels must be >= 1");
  if (c.in_channels < 1 || c.out_channels < 1) throw ValueError("unet: channel counts must be >= 1");
  if (c.leaky_slope < 0.0) throw ValueError("unet: leaky slope must be >= 0");
}

inline nlohmann::ordered_json to_json(const UNetConfig& c) {
  return {{"levels", c.levels},
          {"base_channels", c.base_channels},
          {"leaky_slope", c.leaky_slope},
          {"in_channels", c.in_channels},
          {"out_channels", c.out_channels}};
}

inline UNetConfig config_from_json(const nlohmann::json& j) {
  UNetConfig c;
  c.levels = j.value("levels", c.levels);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.out_channels = j.value("out_channels", c.out_channels);
  validate(c);
  return c;
}

struct ConvSpec {
  std::string name;  // prefix; parameters are "<name>.weight" / "<name>.bias"
  int cin;
  int cout;
  int k;
};

// Every conv in execution order. Encoder level i has two 3x3 convs at
// base*2^i channels; each decoder level has an up-conv, then two convs after
// the skip concat; a 1x1 head produces the logits.
inline std::vector<ConvSpec> conv_layout(const UNetConfig& c) {
  std::vector<ConvSpec> layout;
  int prev = c.in_channels;
  for (int i = 0; i < c.levels; ++i) {
    const int ch = c.channels_at(i);
    const std::string p = "enc" + std::to_string(i);
    layout.push_back({p + ".conv1", prev, ch, 3});
    layout.push_back({p + ".conv2", ch, ch, 3});
    prev = ch;
  }
  for (int i = c.levels - 2; i >= 0; --i) {
    const int ch = c.channels_at(i);
    const std::string p = "dec" + std::to_string(i);
    layout.push_back({p + ".up", prev, ch, 3});
    layout.push_back({p + ".conv1", 2 * ch, ch, 3});
    layout.push_back({p + ".conv2", ch, ch, 3});
    prev = ch;
  }
  layout.push_back({"head", prev, c.out_channels, 1});
  return layout;
}

template <class T>
struct ModelParams {
  UNetConfig config;
  std::vector<std::string> names;
  std::vector<ad::Tensor<T>> tensors;

  const ad::Tensor<T>& get(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return tensors[i];
    throw ValueError("unet: no parameter named '" + name + "'");
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
  }

  // Deep copy; the result shares no storage with *this.
  ModelParams clone() const {
    ModelParams out{config, names, {}};
    for (const auto& t : tensors) out.tensors.push_back(t.detach_copy(true));
    return out;
  }

  void zero_grad() {
    for (auto& t : tensors) t.zero_grad();
  }
};

// He-normal kernels (variance 2 / fan_in), zero biases, drawn in layout order.
template <class T>
ModelParams<T> build(const UNetConfig& config, std::uint64_t seed) {
  validate(config);
  ModelParams<T> params{config, {}, {}};
  Rng rng(seed);
  for (const auto& spec : conv_layout(config)) {
    const int fan_in = spec.cin * spec.k * spec.k;
    const double stddev = std::sqrt(2.0 / fan_in);
    std::vector<T> w(static_cast<std::size_t>(spec.cout) * fan_in);
    for (auto& v : w) v = static_cast<T>(stddev * standard_normal(rng));
    params.names.push_back(spec.name + ".weight");
    params.tensors.push_back(ad::Tensor<T>::from({spec.cout, spec.cin, spec.k, spec.k}, std::move(w), true));
    params.names.push_back(spec.name + ".bias");
    params.tensors.push_back(ad::Tensor<T>::zeros({spec.cout}, true));
  }
  return params;
}

template <class T>
ad::Tensor<T> forward(const ModelParams<T>& params, const ad::Tensor<T>& batch) {
  const UNetConfig& c = params.config;
  if (batch.rank() != 4) throw ShapeError("unet: input must be [N,C,H,W], got " + ad::shape_str(batch.shape()));
  if (batch.dim(1) != c.in_channels)
    throw ShapeError("unet: expected " + std::to_string(c.in_channels) + " input channels, got " +
                     std::to_string(batch.dim(1)));
  const int div = c.size_divisor();
  if (batch.dim(2) % div || batch.dim(3) % div)
    throw ShapeError("unet: input " + std::to_string(batch.dim(2)) + "x" + std::to_string(batch.dim(3)) +
                     " not divisible by " + std::to_string(div));

  const T slope = static_cast<T>(c.leaky_slope);
  auto conv = [&](const std::string& name, const ad::Tensor<T>& x) {
    const auto& w = params.get(name + ".weight");
    const auto& b = params.get(name + ".bias");
    return ad::conv2d(x, w, &b);
  };
  auto conv_act = [&](const std::string& name, const ad::Tensor<T>& x) {
    return ad::leaky_relu(conv(name, x), slope);
  };

  std::vector<ad::Tensor<T>> skips;
  ad::Tensor<T> x = batch;
  for (int i = 0; i < c.levels; ++i) {
    const std::string p = "enc" + std::to_string(i);
    x = conv_act(p + ".conv2", conv_act(p + ".conv1", x));
    if (i < c.levels - 1) {
      skips.push_back(x);
      x = ad::max_pool2(x);
    }
  }
  for (int i = c.levels - 2; i >= 0; --i) {
    const std::string p = "dec" + std::to_string(i);
    x = conv_act(p + ".up", ad::upsample2(x));
    x = ad::concat_channels(skips[static_cast<std::size_t>(i)], x);
    x = conv_act(p + ".conv2", conv_act(p + ".conv1", x));
  }
  return conv("head", x);
}

// sigmoid(logit) >= threshold marks wound. Logits are [1,1,H,W].
template <class T>
BinaryMask logits_to_mask(const ad::Tensor<T>& logits, double threshold = 0.5) {
  if (logits.rank() != 4 || logits.dim(0) != 1 || logits.dim(1) != 1)
    throw ShapeError("unet: expected [1,1,H,W] logits, got " + ad::shape_str(logits.shape()));
  const int h = logits.dim(2), w = logits.dim(3);
  BinaryMask m(w, h);
  for (std::size_t i = 0; i < logits.numel(); ++i)
    m.set_index(i, ad::sigmoid_scalar(static_cast<double>(logits.values()[i])) >= threshold);
  return m;
}

// `input` is an already normalized [1,C,H,W] tensor.
template <class T>
BinaryMask predict_mask(const ModelParams<T>& params, const ad::Tensor<T>& input, double threshold = 0.5) {
  return logits_to_mask(forward(params, input), threshold);
}

// ---- persistence -------------------------------------------------------------------

template <class T>
void save_params(const std::filesystem::path& checkpoint, const ModelParams<T>& p) {
  std::vector<ad::NamedTensor<T>> named;
  for (std::size_t i = 0; i < p.names.size(); ++i) named.push_back({p.names[i], p.tensors[i]});
  ad::save_checkpoint(checkpoint, named);
}

// Loads tensors into a freshly built layout; names and shapes must match.
template <class T>
ModelParams<T> load_params(const std::filesystem::path& checkpoint, const UNetConfig& config) {
  ModelParams<T> p = build<T>(config, 0);
  auto loaded = ad::load_checkpoint<T>(checkpoint);
  if (loaded.size() != p.names.size())
    throw FormatError("checkpoint has " + std::to_string(loaded.size()) + " tensors, model expects " +
                      std::to_string(p.names.size()));
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    if (loaded[i].name != p.names[i])
      throw FormatError("checkpoint tensor '" + loaded[i].name + "' where '" + p.names[i] + "' expected");
    if (loaded[i].tensor.shape() != p.tensors[i].shape())
      throw FormatError("checkpoint tensor '" + loaded[i].name + "' has shape " +
                        ad::shape_str(loaded[i].tensor.shape()));
    p.tensors[i] = loaded[i].tensor.detach_copy(true);
  }
  return p;
}

}  // namespace woundseg::unet
