#pragma once

// Global magnitude pruning, pruned fine-tuning and bits-per-pixel accounting.
// Quantization lives in quantization.hpp.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "nervcp/errors.hpp"
#include "nervcp/nerv_model.hpp"
#include "nervcp/quantization.hpp"
#include "nervcp/training.hpp"

namespace nervcp {

struct PruneSpec {
  double sparsity = 0.0;
  double threshold = 0.0;
  // Per tensor, 1 marks a pruned position. Empty when nothing was pruned.
  std::vector<std::vector<std::uint8_t>> mask;

  std::size_t pruned_count() const {
    std::size_t n = 0;
    for (const auto& m : mask) n += static_cast<std::size_t>(std::count(m.begin(), m.end(), 1));
    return n;
  }
};

struct PruneResult {
  NervModel model;
  PruneSpec spec;
};

/// Zeroes every parameter whose magnitude is below the sparsity-quantile of
/// |theta| pooled over all tensors. Values equal to the threshold are kept.
inline PruneResult prune_global(const NervModel& model, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) {
    throw ConfigError("sparsity must be in [0, 1], got " + std::to_string(sparsity));
  }
  PruneResult res{model, {sparsity, 0.0, {}}};
  const std::size_t total = model.params.count();
  if (sparsity == 0.0 || total == 0) return res;

  std::vector<float> mags;
  mags.reserve(total);
  model.params.for_each_value([&](float v) { mags.push_back(std::abs(v)); });
  const auto k = static_cast<std::size_t>(std::llround(sparsity * static_cast<double>(total)));
  float threshold = std::numeric_limits<float>::infinity();
  if (k < total) {
    std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k), mags.end());
    threshold = mags[k];
  }
  res.spec.threshold = threshold;

  for (auto& t : res.model.params.tensors) {
    auto& m = res.spec.mask.emplace_back(t.data.size(), 0);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      if (std::abs(t.data[i]) < threshold) {
        t.data[i] = 0.0f;
        m[i] = 1;
      }
    }
  }
  return res;
}

inline double zero_fraction(const NervModel& model) {
  std::size_t zeros = 0;
  model.params.for_each_value([&](float v) { zeros += v == 0.0f; });
  return static_cast<double>(zeros) / static_cast<double>(model.params.count());
}

inline void apply_mask(NervModel& model, const PruneSpec& spec) {
  for (std::size_t k = 0; k < spec.mask.size(); ++k) {
    auto& data = model.params.tensors[k].data;
    const auto& m = spec.mask[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (m[i]) data[i] = 0.0f;
    }
  }
}

/// Retrains a pruned model with pruned positions pinned to zero after every
/// optimizer step.
inline NervModel finetune_pruned(const NervModel& model, const PruneSpec& spec,
                                 const FrameSequence& frames, const KeyModule& key,
                                 const TrainConfig& cfg) {
  if (!spec.mask.empty()) {
    if (spec.mask.size() != model.params.tensors.size()) {
      throw ShapeMismatch("prune mask does not cover every tensor");
    }
    for (std::size_t k = 0; k < spec.mask.size(); ++k) {
      if (spec.mask[k].size() != model.params.tensors[k].size()) {
        throw ShapeMismatch("prune mask for " + model.params.tensors[k].name + " has wrong size");
      }
    }
  }
  TrainHooks hooks;
  hooks.after_step = [&spec](NervModel& m) { apply_mask(m, spec); };
  return train_video(frames, key, model, cfg, hooks).model;
}

/// P * sparsity * QB / N_pixel. Sparsity is the kept fraction (1 = dense).
inline double bpp(double parameter_count, double sparsity, double qb, double n_pixels) {
  if (n_pixels <= 0.0) throw ZeroPixels("pixel count must be positive");
  return parameter_count * sparsity * qb / n_pixels;
}

struct CompressionReport {
  std::uint64_t p_theta = 0;
  double sparsity = 1.0;
  int qb = 32;
  std::uint64_t n_pixel = 0;
  double bpp = 0.0;
};

inline CompressionReport make_compression_report(std::uint64_t p_theta, double sparsity, int qb,
                                                 std::uint64_t n_pixel) {
  return {p_theta, sparsity, qb, n_pixel,
          bpp(static_cast<double>(p_theta), sparsity, qb, static_cast<double>(n_pixel))};
}

inline void to_json(nlohmann::json& j, const CompressionReport& r) {
  j = nlohmann::json{{"p_theta", r.p_theta},
                     {"sparsity", r.sparsity},
                     {"qb", r.qb},
                     {"n_pixel", r.n_pixel},
                     {"bpp", r.bpp}};
}

}  // namespace nervcp
