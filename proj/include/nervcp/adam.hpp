#pragma once

#include <cmath>

#include "nervcp/tensor.hpp"

namespace nervcp {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers mirror the parameter layout.
class Adam {
 public:
  Adam(const ParameterSet& params, AdamConfig cfg)
      : cfg_(cfg), m_(params.zeros_like()), v_(params.zeros_like()) {}

  void step(ParameterSet& params, const ParameterSet& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    const float b1 = static_cast<float>(cfg_.beta1);
    const float b2 = static_cast<float>(cfg_.beta2);
    const float step = static_cast<float>(cfg_.lr / bc1);
    const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const float eps = static_cast<float>(cfg_.eps);
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
      auto& p = params.tensors[k].data;
      const auto& g = grads.tensors[k].data;
      auto& m = m_.tensors[k].data;
      auto& v = v_.tensors[k].data;
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1.0f - b1) * g[i];
        v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
        p[i] -= step * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
      }
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  ParameterSet m_;
  ParameterSet v_;
  long t_ = 0;
};

}  // namespace nervcp
