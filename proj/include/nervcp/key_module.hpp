#pragma once

// Positional encoding and the key-controllable encoder. The key module maps a
// timestamp to a mask over the positional embedding; possessing its weights
// is what lets a receiver decode the video network.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nervcp/adam.hpp"
#include "nervcp/binary_io.hpp"
#include "nervcp/errors.hpp"
#include "nervcp/nn.hpp"
#include "nervcp/rng.hpp"
#include "nervcp/tensor.hpp"

namespace nervcp {

using Embedding = std::vector<double>;
using KeyMask = std::vector<double>;

struct PEConfig {
  double base = 1.25;  // b
  int frequencies = 80;  // l

  int embedding_length() const { return 2 * frequencies; }

  void validate() const {
    if (!(base > 1.0) || !std::isfinite(base)) {
      throw ConfigError("positional encoding base must be > 1");
    }
    if (frequencies < 1) throw ConfigError("positional encoding needs at least one frequency");
  }
  bool operator==(const PEConfig&) const = default;
};

enum class KeyMode : std::uint8_t { kFixed = 0, kLearnable = 1 };

inline std::string to_string(KeyMode m) { return m == KeyMode::kFixed ? "FAE" : "LAE"; }

inline KeyMode key_mode_from_string(const std::string& s) {
  if (s == "FAE" || s == "fae") return KeyMode::kFixed;
  if (s == "LAE" || s == "lae") return KeyMode::kLearnable;
  throw ConfigError("key mode must be FAE or LAE, got '" + s + "'");
}

inline void check_timestamp(double t) {
  if (!(t > 0.0 && t <= 1.0)) {
    throw OutOfRangeTimestamp("timestamp " + std::to_string(t) + " outside (0, 1]");
  }
}

/// (sin(b^0 pi t), cos(b^0 pi t), ..., sin(b^{l-1} pi t), cos(b^{l-1} pi t)).
inline Embedding positional_encode(double t, const PEConfig& cfg) {
  check_timestamp(t);
  cfg.validate();
  Embedding e(cfg.embedding_length());
  for (int k = 0; k < cfg.frequencies; ++k) {
    const double arg = std::pow(cfg.base, k) * std::numbers::pi * t;
    e[2 * k] = std::sin(arg);
    e[2 * k + 1] = std::cos(arg);
  }
  return e;
}

/// Three affine layers 1 -> 2l -> 2l -> 2l with GELU after the first two.
struct KeyModule {
  PEConfig pe;
  KeyMode mode = KeyMode::kFixed;
  ParameterSet params;

  int width() const { return pe.embedding_length(); }
  bool operator==(const KeyModule&) const = default;
};

inline constexpr const char* kKeyLayerNames[3] = {"fc0", "fc1", "fc2"};

inline KeyModule init_key_module(const PEConfig& pe, std::uint64_t seed) {
  pe.validate();
  KeyModule key;
  key.pe = pe;
  const int w = pe.embedding_length();
  auto rng = make_rng(seed, "key-init");
  const int fan_in[3] = {1, w, w};
  for (int i = 0; i < 3; ++i) {
    const std::string n = kKeyLayerNames[i];
    nn::init_fan_in_uniform(key.params.add(n + ".weight", {fan_in[i], w}), fan_in[i], rng);
    nn::init_fan_in_uniform(key.params.add(n + ".bias", {w}), fan_in[i], rng);
  }
  return key;
}

inline void check_key_shapes(const KeyModule& key) {
  const int w = key.width();
  const int fan_in[3] = {1, w, w};
  for (int i = 0; i < 3; ++i) {
    const std::string n = kKeyLayerNames[i];
    const auto* wt = key.params.find(n + ".weight");
    const auto* bt = key.params.find(n + ".bias");
    if (!wt || !bt || wt->shape != std::vector<int>{fan_in[i], w} ||
        bt->shape != std::vector<int>{w}) {
      throw ShapeMismatch("key module layer " + n + " does not match embedding length " +
                          std::to_string(w));
    }
  }
}

/// Activations kept for the backward pass.
struct KeyActivations {
  float t = 0.0f;
  std::vector<float> pre0, pre1, h0, h1, mask;
};

inline KeyActivations key_forward(double t, const KeyModule& key) {
  const int w = key.width();
  KeyActivations a;
  a.t = static_cast<float>(t);
  a.pre0.resize(w);
  a.pre1.resize(w);
  a.mask.resize(w);
  const float input[1] = {a.t};
  const auto& P = key.params;
  nn::linear_forward(input, P.get("fc0.weight"), P.get("fc0.bias"), a.pre0);
  a.h0 = a.pre0;
  nn::gelu_inplace(a.h0);
  nn::linear_forward(a.h0, P.get("fc1.weight"), P.get("fc1.bias"), a.pre1);
  a.h1 = a.pre1;
  nn::gelu_inplace(a.h1);
  nn::linear_forward(a.h1, P.get("fc2.weight"), P.get("fc2.bias"), a.mask);
  return a;
}

/// Accumulates parameter gradients of the key module given dL/dmask.
inline void key_backward(const KeyModule& key, const KeyActivations& a,
                         std::span<const float> dmask, ParameterSet& grads) {
  const int w = key.width();
  const auto& P = key.params;
  std::vector<float> dh1(w), dh0(w);
  nn::linear_backward(a.h1, P.get("fc2.weight"), dmask, &grads.get("fc2.weight"),
                      &grads.get("fc2.bias"), dh1);
  nn::gelu_backward(a.pre1, dh1);
  nn::linear_backward(a.h0, P.get("fc1.weight"), dh1, &grads.get("fc1.weight"),
                      &grads.get("fc1.bias"), dh0);
  nn::gelu_backward(a.pre0, dh0);
  const float input[1] = {a.t};
  nn::linear_backward(input, P.get("fc0.weight"), dh0, &grads.get("fc0.weight"),
                      &grads.get("fc0.bias"), {});
}

inline KeyMask key_mask(double t, const KeyModule& key) {
  check_timestamp(t);
  check_key_shapes(key);
  const auto a = key_forward(t, key);
  return KeyMask(a.mask.begin(), a.mask.end());
}

/// key_mask(t) (elementwise) positional_encode(t).
inline Embedding key_embed(double t, const KeyModule& key, const PEConfig& cfg) {
  if (key.width() != cfg.embedding_length()) {
    throw ShapeMismatch("key width " + std::to_string(key.width()) +
                        " != embedding length " + std::to_string(cfg.embedding_length()));
  }
  const auto mask = key_mask(t, key);
  auto e = positional_encode(t, cfg);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] *= mask[i];
  return e;
}

/// Mean over timestamps of MSE(key_mask(t), positional_encode(t)).
inline double key_mse(const KeyModule& key, std::span<const double> timestamps) {
  double total = 0.0;
  for (double t : timestamps) {
    const auto m = key_mask(t, key);
    const auto e = positional_encode(t, key.pe);
    double s = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) s += (m[i] - e[i]) * (m[i] - e[i]);
    total += s / static_cast<double>(e.size());
  }
  return total / static_cast<double>(timestamps.size());
}

struct KeyPretraining {
  KeyModule key;
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;  // mean grid MSE after each epoch
};

/// Fits the key mask to the positional embedding with Adam, one timestamp per
/// step in a seeded shuffled order. The result is a fixed (FAE) key.
inline KeyPretraining pretrain_key(const PEConfig& cfg, std::span<const double> timestamps,
                                   int epochs, double lr, std::uint64_t seed) {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (timestamps.empty()) throw InvalidCount("no timestamps to pretrain on");
  for (double t : timestamps) check_timestamp(t);

  KeyPretraining out;
  out.key = init_key_module(cfg, seed);
  out.key.mode = KeyMode::kFixed;
  out.initial_loss = key_mse(out.key, timestamps);

  const int w = cfg.embedding_length();
  Adam adam(out.key.params, AdamConfig{.lr = lr});
  ParameterSet grads = out.key.params.zeros_like();
  auto rng = make_rng(seed, "key-order");
  std::vector<std::size_t> order(timestamps.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<float> dmask(w);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const double t = timestamps[idx];
      const auto a = key_forward(t, out.key);
      const auto e = positional_encode(t, cfg);
      for (int i = 0; i < w; ++i) {
        dmask[i] = static_cast<float>(2.0 * (a.mask[i] - e[i]) / w);
      }
      grads.fill(0.0f);
      key_backward(out.key, a, dmask, grads);
      adam.step(out.key.params, grads);
    }
    const double loss = key_mse(out.key, timestamps);
    if (!std::isfinite(loss)) {
      throw DivergenceError("key pretraining loss became non-finite at epoch " +
                            std::to_string(epoch));
    }
    out.epoch_loss.push_back(loss);
  }
  return out;
}

// ------------------------------------------------------------ key file

inline constexpr std::string_view kKeyMagic = "NVKEY";
inline constexpr std::uint16_t kKeyFormatVersion = 1;

namespace detail {

inline void write_tensors(binary::Writer& w, const ParameterSet& params) {
  w.u32(static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& t : params.tensors) {
    w.str(t.name);
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (int d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    w.bytes(t.data.data(), t.data.size() * sizeof(float));
  }
}

inline ParameterSet read_tensors(binary::Reader& r) {
  ParameterSet params;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    std::vector<int> shape(r.u8());
    for (int& d : shape) d = static_cast<int>(r.u32());
    auto& t = params.add(std::move(name), std::move(shape));
    r.bytes(t.data.data(), t.data.size() * sizeof(float));
  }
  return params;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_key(const KeyModule& key,
                                               std::uint16_t version = kKeyFormatVersion) {
  binary::Writer w;
  w.magic(kKeyMagic);
  w.u16(version);
  w.f64(key.pe.base);
  w.u32(static_cast<std::uint32_t>(key.pe.frequencies));
  w.u8(static_cast<std::uint8_t>(key.mode));
  detail::write_tensors(w, key.params);
  return std::move(w).finish();
}

inline KeyModule deserialize_key(std::span<const std::uint8_t> bytes) {
  std::uint16_t version = 0;
  binary::Reader r(binary::open_container(bytes, kKeyMagic, kKeyFormatVersion, version));
  KeyModule key;
  key.pe.base = r.f64();
  key.pe.frequencies = static_cast<int>(r.u32());
  const auto mode = r.u8();
  if (mode > 1) throw FormatError("unknown key mode byte " + std::to_string(mode));
  key.mode = static_cast<KeyMode>(mode);
  key.params = detail::read_tensors(r);
  if (r.remaining() != 0) throw FormatError("trailing bytes in key payload");
  check_key_shapes(key);
  return key;
}

inline void save_key(const KeyModule& key, const std::filesystem::path& path) {
  binary::write_file(path, serialize_key(key));
}

inline KeyModule load_key(const std::filesystem::path& path) {
  return deserialize_key(binary::read_file(path));
}

}  // namespace nervcp
