#pragma once

// The video network: MLP stem -> reshape to a (h0, w0, C1) grid -> NeRV
// blocks (3x3 conv, PixelShuffle, GELU) -> 1x1 head to RGB.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nervcp/errors.hpp"
#include "nervcp/frame_io.hpp"
#include "nervcp/key_module.hpp"
#include "nervcp/nn.hpp"
#include "nervcp/rng.hpp"
#include "nervcp/tensor.hpp"

namespace nervcp {

enum class OutputActivation { kSigmoid, kClamp };

struct ModelConfig {
  int c1 = 26;
  int c2 = 26;
  std::vector<int> upscale_factors = {5, 2, 2, 2, 2};
  int base_height = 9;
  int base_width = 16;
  int min_channels = 96;
  int mlp_hidden = 512;
  PEConfig pe;
  OutputActivation output_activation = OutputActivation::kSigmoid;
  // Optional expected output size; 0 means "whatever the factors give".
  int target_height = 0;
  int target_width = 0;

  static constexpr int kKernelSize = 3;

  int total_upscale() const {
    int s = 1;
    for (int r : upscale_factors) s *= r;
    return s;
  }
  int output_height() const { return base_height * total_upscale(); }
  int output_width() const { return base_width * total_upscale(); }
  int stem_outputs() const { return c1 * base_height * base_width; }

  int block_in_channels(std::size_t i) const {
    return i == 0 ? c1 : block_out_channels(i - 1);
  }
  /// C2 for the first block, then C2/2, C2/4, ... floored at min_channels.
  int block_out_channels(std::size_t i) const {
    if (i == 0) return c2;
    return std::max(c2 >> i, min_channels);
  }

  void validate() const {
    pe.validate();
    if (c1 < 1 || c2 < 1) throw ConfigError("C1 and C2 must be positive");
    if (mlp_hidden < 1) throw ConfigError("mlp_hidden must be positive");
    if (base_height < 1 || base_width < 1) throw ConfigError("base grid must be positive");
    if (upscale_factors.empty()) throw ConfigError("at least one NeRV block is required");
    for (int r : upscale_factors) {
      if (r < 1) throw ConfigError("upscale factors must be positive");
    }
    if (min_channels < 1) {
      throw ConfigError("min_channels must be >= 1; the halving schedule needs a floor");
    }
    if ((target_height != 0 || target_width != 0) &&
        (target_height != output_height() || target_width != output_width())) {
      throw ConfigError("base grid " + std::to_string(base_height) + "x" +
                        std::to_string(base_width) + " times upscale " +
                        std::to_string(total_upscale()) + " does not reach " +
                        std::to_string(target_height) + "x" + std::to_string(target_width));
    }
  }
  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const PEConfig& pe) {
  j = nlohmann::json{{"b", pe.base}, {"l", pe.frequencies}};
}

namespace detail {
inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> keys,
                                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* s) { return k == s; })) {
      throw ConfigError("unknown key '" + k + "' in " + where);
    }
  }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}
}  // namespace detail

inline void from_json(const nlohmann::json& j, PEConfig& pe) {
  detail::reject_unknown_keys(j, {"b", "l", "embedding_length"}, "pe");
  detail::read_opt(j, "b", pe.base);
  detail::read_opt(j, "l", pe.frequencies);
  if (j.contains("embedding_length")) {
    const int len = j.at("embedding_length").get<int>();
    if (len % 2 != 0) throw ConfigError("embedding_length must be even");
    if (j.contains("l") && len != 2 * pe.frequencies) {
      throw ConfigError("embedding_length != 2*l");
    }
    pe.frequencies = len / 2;
  }
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"c1", c.c1},
                     {"c2", c.c2},
                     {"upscale_factors", c.upscale_factors},
                     {"base_grid", {c.base_height, c.base_width}},
                     {"min_channels", c.min_channels},
                     {"mlp_hidden", c.mlp_hidden},
                     {"pe", c.pe},
                     {"output_activation",
                      c.output_activation == OutputActivation::kSigmoid ? "sigmoid" : "clamp"},
                     {"target", {c.target_height, c.target_width}}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  detail::reject_unknown_keys(j,
                              {"c1", "c2", "upscale_factors", "base_grid", "min_channels",
                               "mlp_hidden", "pe", "output_activation", "target"},
                              "model");
  detail::read_opt(j, "c1", c.c1);
  detail::read_opt(j, "c2", c.c2);
  detail::read_opt(j, "upscale_factors", c.upscale_factors);
  detail::read_opt(j, "min_channels", c.min_channels);
  detail::read_opt(j, "mlp_hidden", c.mlp_hidden);
  if (j.contains("base_grid")) {
    const auto g = j.at("base_grid").get<std::vector<int>>();
    if (g.size() != 2) throw ConfigError("base_grid must be [h0, w0]");
    c.base_height = g[0];
    c.base_width = g[1];
  }
  if (j.contains("target")) {
    const auto g = j.at("target").get<std::vector<int>>();
    if (g.size() != 2) throw ConfigError("target must be [H, W]");
    c.target_height = g[0];
    c.target_width = g[1];
  }
  if (j.contains("pe")) c.pe = j.at("pe").get<PEConfig>();
  if (j.contains("output_activation")) {
    const auto s = j.at("output_activation").get<std::string>();
    if (s == "sigmoid") {
      c.output_activation = OutputActivation::kSigmoid;
    } else if (s == "clamp") {
      c.output_activation = OutputActivation::kClamp;
    } else {
      throw ConfigError("output_activation must be sigmoid or clamp");
    }
  }
}

struct NervModel {
  ModelConfig config;
  ParameterSet params;

  std::size_t parameter_count() const { return params.count(); }
  bool operator==(const NervModel&) const = default;
};

inline std::string block_weight_name(std::size_t i) {
  return "blocks." + std::to_string(i) + ".conv.weight";
}
inline std::string block_bias_name(std::size_t i) {
  return "blocks." + std::to_string(i) + ".conv.bias";
}

/// Allocates every tensor of the architecture, zero-filled.
inline ParameterSet allocate_parameters(const ModelConfig& cfg) {
  ParameterSet p;
  const int emb = cfg.pe.embedding_length();
  p.add("mlp.0.weight", {emb, cfg.mlp_hidden});
  p.add("mlp.0.bias", {cfg.mlp_hidden});
  p.add("mlp.1.weight", {cfg.mlp_hidden, cfg.stem_outputs()});
  p.add("mlp.1.bias", {cfg.stem_outputs()});
  for (std::size_t i = 0; i < cfg.upscale_factors.size(); ++i) {
    const int r = cfg.upscale_factors[i];
    const int cout = cfg.block_out_channels(i) * r * r;
    p.add(block_weight_name(i), {3, 3, cfg.block_in_channels(i), cout});
    p.add(block_bias_name(i), {cout});
  }
  const int last = cfg.block_out_channels(cfg.upscale_factors.size() - 1);
  p.add("head.weight", {last, 3});
  p.add("head.bias", {3});
  return p;
}

/// Seeded fan-in uniform initialization of every layer.
inline NervModel build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  NervModel model{config, allocate_parameters(config)};
  auto rng = make_rng(seed, "model-init");
  for (std::size_t k = 0; k < model.params.tensors.size(); k += 2) {
    auto& w = model.params.tensors[k];
    auto& b = model.params.tensors[k + 1];
    int fan_in = 1;
    for (std::size_t d = 0; d + 1 < w.shape.size(); ++d) fan_in *= w.shape[d];
    nn::init_fan_in_uniform(w, fan_in, rng);
    nn::init_fan_in_uniform(b, fan_in, rng);
  }
  return model;
}

inline void check_model_layout(const NervModel& model) {
  if (!allocate_parameters(model.config).same_layout(model.params)) {
    throw ShapeMismatch("model parameters do not match the model configuration");
  }
}

/// One NeRV block: GELU(pixel_shuffle(conv3x3(x), r)). `cols` and
/// `shuffled` are filled for the backward pass when non-null.
inline nn::FeatureMap nerv_block_forward(const nn::FeatureMap& x, const Tensor& weight,
                                         const Tensor& bias, int r,
                                         nn::RowMatrix* cols = nullptr,
                                         nn::FeatureMap* shuffled = nullptr) {
  nn::RowMatrix local;
  auto conv = nn::conv3x3_forward(x, weight, bias, cols ? *cols : local);
  auto y = nn::pixel_shuffle(conv, r);
  if (shuffled) *shuffled = y;
  nn::gelu_inplace(y.data);
  return y;
}

struct BlockTrace {
  nn::FeatureMap input;
  nn::RowMatrix cols;
  nn::FeatureMap shuffled;  // pre-GELU
};

struct ForwardTrace {
  std::vector<float> input;
  std::vector<float> stem_pre;  // pre-GELU hidden
  std::vector<float> stem_hidden;
  std::vector<BlockTrace> blocks;
  nn::FeatureMap head_input;
  Frame output;
};

inline ForwardTrace forward_trace(std::span<const float> embedding, const NervModel& model) {
  const auto& cfg = model.config;
  const auto& P = model.params;
  if (static_cast<int>(embedding.size()) != cfg.pe.embedding_length()) {
    throw ShapeError("embedding has length " + std::to_string(embedding.size()) +
                     ", model expects " + std::to_string(cfg.pe.embedding_length()));
  }
  ForwardTrace tr;
  tr.input.assign(embedding.begin(), embedding.end());
  tr.stem_pre.resize(cfg.mlp_hidden);
  nn::linear_forward(tr.input, P.get("mlp.0.weight"), P.get("mlp.0.bias"), tr.stem_pre);
  tr.stem_hidden = tr.stem_pre;
  nn::gelu_inplace(tr.stem_hidden);

  nn::FeatureMap x(cfg.base_height, cfg.base_width, cfg.c1);
  nn::linear_forward(tr.stem_hidden, P.get("mlp.1.weight"), P.get("mlp.1.bias"), x.data);

  tr.blocks.resize(cfg.upscale_factors.size());
  for (std::size_t i = 0; i < cfg.upscale_factors.size(); ++i) {
    auto& bt = tr.blocks[i];
    bt.input = std::move(x);
    x = nerv_block_forward(bt.input, P.get(block_weight_name(i)), P.get(block_bias_name(i)),
                           cfg.upscale_factors[i], &bt.cols, &bt.shuffled);
  }
  tr.head_input = std::move(x);
  auto head = nn::conv1x1_forward(tr.head_input, P.get("head.weight"), P.get("head.bias"));

  tr.output = Frame(head.height, head.width);
  for (std::size_t i = 0; i < head.data.size(); ++i) {
    const float v = head.data[i];
    tr.output.pixels[i] = cfg.output_activation == OutputActivation::kSigmoid
                              ? nn::sigmoid(v)
                              : std::clamp(v, 0.0f, 1.0f);
  }
  return tr;
}

inline Frame forward(std::span<const float> embedding, const NervModel& model) {
  return forward_trace(embedding, model).output;
}

inline Frame forward(const Embedding& embedding, const NervModel& model) {
  std::vector<float> e(embedding.begin(), embedding.end());
  return forward(e, model);
}

/// Backpropagates dL/d(output pixels). Gradients accumulate into `grads`;
/// dL/d(embedding) is written to `d_input` when it is non-empty.
inline void backward(const NervModel& model, const ForwardTrace& tr,
                     std::span<const float> d_output, ParameterSet& grads,
                     std::span<float> d_input = {}) {
  const auto& cfg = model.config;
  const auto& P = model.params;

  nn::FeatureMap d_head(tr.output.height, tr.output.width, 3);
  for (std::size_t i = 0; i < d_head.data.size(); ++i) {
    const float y = tr.output.pixels[i];
    if (cfg.output_activation == OutputActivation::kSigmoid) {
      d_head.data[i] = d_output[i] * y * (1.0f - y);
    } else {
      d_head.data[i] = (y > 0.0f && y < 1.0f) ? d_output[i] : 0.0f;
    }
  }
  nn::FeatureMap dx;
  nn::conv1x1_backward(tr.head_input, P.get("head.weight"), d_head, &grads.get("head.weight"),
                       &grads.get("head.bias"), &dx);

  for (std::size_t i = cfg.upscale_factors.size(); i-- > 0;) {
    const auto& bt = tr.blocks[i];
    nn::gelu_backward(bt.shuffled.data, dx.data);
    auto d_conv = nn::pixel_unshuffle(dx, cfg.upscale_factors[i]);
    nn::FeatureMap d_in;
    nn::conv3x3_backward(bt.cols, P.get(block_weight_name(i)), d_conv,
                         &grads.get(block_weight_name(i)), &grads.get(block_bias_name(i)),
                         &d_in);
    dx = std::move(d_in);
  }

  std::vector<float> d_hidden(cfg.mlp_hidden);
  nn::linear_backward(tr.stem_hidden, P.get("mlp.1.weight"), dx.data, &grads.get("mlp.1.weight"),
                      &grads.get("mlp.1.bias"), d_hidden);
  nn::gelu_backward(tr.stem_pre, d_hidden);
  nn::linear_backward(tr.input, P.get("mlp.0.weight"), d_hidden, &grads.get("mlp.0.weight"),
                      &grads.get("mlp.0.bias"), d_input);
}

}  // namespace nervcp
