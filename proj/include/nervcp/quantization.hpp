#pragma once

// Post-hoc per-tensor min-max quantization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nervcp/errors.hpp"
#include "nervcp/nerv_model.hpp"
#include "nervcp/tensor.hpp"

namespace nervcp {

struct QuantizedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<std::uint32_t> q;
  double mu_min = 0.0;
  double mu_max = 0.0;
  int bit = 8;

  /// (mu_max - mu_min) / 2^bit
  double scale() const { return (mu_max - mu_min) / std::ldexp(1.0, bit); }
  std::uint32_t max_level() const { return (std::uint32_t{1} << bit) - 1; }
  bool operator==(const QuantizedTensor&) const = default;
};

enum class QuantizationScheme {
  // q = round((mu - mu_min) / S), reconstruction q * S + mu_min.
  kMinMax,
  // Formula as typeset: q = round((mu - mu_min) / 2^bit). Collapses almost
  // every weight to mu_min; only for side-by-side comparison.
  kLiteral,
};

inline QuantizedTensor quantize_values(std::span<const float> values, int bit,
                                       QuantizationScheme scheme = QuantizationScheme::kMinMax) {
  if (bit < 1 || bit > 16) throw ConfigError("bit must be in [1, 16], got " + std::to_string(bit));
  QuantizedTensor qt;
  qt.bit = bit;
  qt.q.assign(values.size(), 0);
  if (values.empty()) return qt;
  for (float v : values) {
    if (!std::isfinite(v)) throw NonFiniteInput("cannot quantize non-finite values");
  }
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  qt.mu_min = *lo;
  qt.mu_max = *hi;
  const double S = qt.scale();
  if (S == 0.0) return qt;
  const double divisor = scheme == QuantizationScheme::kMinMax ? S : std::ldexp(1.0, bit);
  const double top = qt.max_level();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double level = std::round((values[i] - qt.mu_min) / divisor);
    qt.q[i] = static_cast<std::uint32_t>(std::clamp(level, 0.0, top));
  }
  return qt;
}

inline QuantizedTensor quantize_tensor(const Tensor& t, int bit,
                                       QuantizationScheme scheme = QuantizationScheme::kMinMax) {
  auto qt = quantize_values(t.data, bit, scheme);
  qt.name = t.name;
  qt.shape = t.shape;
  return qt;
}

/// mu_hat = q * S + mu_min
inline std::vector<float> dequantize_values(const QuantizedTensor& qt) {
  const double S = qt.scale();
  std::vector<float> out(qt.q.size());
  for (std::size_t i = 0; i < qt.q.size(); ++i) {
    out[i] = static_cast<float>(qt.q[i] * S + qt.mu_min);
  }
  return out;
}

inline Tensor dequantize_tensor(const QuantizedTensor& qt) {
  Tensor t;
  t.name = qt.name;
  t.shape = qt.shape;
  t.data = dequantize_values(qt);
  return t;
}

struct QuantizedModel {
  ModelConfig config;
  std::vector<QuantizedTensor> tensors;

  int bit() const { return tensors.empty() ? 0 : tensors.front().bit; }
  bool operator==(const QuantizedModel&) const = default;
};

inline QuantizedModel quantize_model(const NervModel& model, int bit,
                                     QuantizationScheme scheme = QuantizationScheme::kMinMax) {
  QuantizedModel qm{model.config, {}};
  for (const auto& t : model.params.tensors) qm.tensors.push_back(quantize_tensor(t, bit, scheme));
  return qm;
}

inline NervModel dequantize_model(const QuantizedModel& qm) {
  NervModel m{qm.config, {}};
  for (const auto& qt : qm.tensors) m.params.tensors.push_back(dequantize_tensor(qt));
  check_model_layout(m);
  return m;
}

}  // namespace nervcp
