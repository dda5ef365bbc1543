#pragma once

// Overfitting the video network to a frame sequence through the key path
// ("encryption"), plus keyed rendering ("decryption").

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "nervcp/adam.hpp"
#include "nervcp/errors.hpp"
#include "nervcp/frame_io.hpp"
#include "nervcp/key_module.hpp"
#include "nervcp/metrics.hpp"
#include "nervcp/model_io.hpp"
#include "nervcp/nerv_model.hpp"
#include "nervcp/rng.hpp"

namespace nervcp {

struct TrainConfig {
  int epochs = 2400;
  int batch_size = 1;
  double lr = 5e-4;
  double alpha = 0.7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  KeyMode key_mode = KeyMode::kFixed;
  int checkpoint_every = 0;          // 0 disables checkpoints
  std::filesystem::path output_dir;  // checkpoints + loss.csv; empty disables

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  }
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double psnr = 0.0;
};

struct TrainResult {
  NervModel model;
  KeyModule key;  // updated in LAE mode, untouched in FAE mode
  std::vector<EpochStats> history;

  std::vector<double> losses() const {
    std::vector<double> l;
    for (const auto& h : history) l.push_back(h.loss);
    return l;
  }
};

struct TrainHooks {
  // Runs after every optimizer step; fine-tuning uses it to pin pruned
  // weights to zero.
  std::function<void(NervModel&)> after_step;
  // Called when a checkpoint is due (epoch is 1-based). Defaults to writing
  // checkpoint_NNNNN.nvcp into the output directory.
  std::function<void(const NervModel&, const KeyModule&, int epoch)> checkpoint;
};

inline std::vector<float> to_float(const Embedding& e) { return {e.begin(), e.end()}; }

/// Network input for timestamp t through the key path.
inline std::vector<float> keyed_input(double t, const KeyModule& key) {
  return to_float(key_embed(t, key, key.pe));
}

inline Frame decode_with_key(const NervModel& model, const KeyModule& key, double t) {
  return forward(keyed_input(t, key), model);
}

inline std::vector<Frame> render_with_key(const NervModel& model, const KeyModule& key,
                                          std::span<const double> timestamps) {
  std::vector<Frame> out;
  out.reserve(timestamps.size());
  for (double t : timestamps) out.push_back(decode_with_key(model, key, t));
  return out;
}

inline void check_training_inputs(const FrameSequence& frames, const KeyModule& key,
                                  const NervModel& model) {
  if (!(key.pe == model.config.pe)) {
    throw ConfigMismatch("key positional-encoding config differs from the model's");
  }
  if (frames.count() == 0) throw ConfigMismatch("no frames to train on");
  if (frames.height() != model.config.output_height() ||
      frames.width() != model.config.output_width()) {
    throw ConfigMismatch("frames are " + std::to_string(frames.height()) + "x" +
                         std::to_string(frames.width()) + ", model renders " +
                         std::to_string(model.config.output_height()) + "x" +
                         std::to_string(model.config.output_width()));
  }
  check_key_shapes(key);
  check_model_layout(model);
}

/// Minimizes the mean composite loss over the sequence with Adam. In FAE mode
/// the key is frozen; in LAE mode it is optimized jointly.
inline TrainResult train_video(const FrameSequence& frames, const KeyModule& key,
                               const NervModel& model, const TrainConfig& cfg,
                               const TrainHooks& hooks = {}) {
  cfg.validate();
  check_training_inputs(frames, key, model);

  TrainResult res{model, key, {}};
  if (cfg.epochs == 0) return res;

  const bool learn_key = cfg.key_mode == KeyMode::kLearnable;
  res.key.mode = cfg.key_mode;
  const AdamConfig adam_cfg{.lr = cfg.lr, .beta1 = cfg.beta1, .beta2 = cfg.beta2};
  Adam model_opt(res.model.params, adam_cfg);
  std::optional<Adam> key_opt;
  if (learn_key) key_opt.emplace(res.key.params, adam_cfg);

  ParameterSet model_grads = res.model.params.zeros_like();
  ParameterSet key_grads = res.key.params.zeros_like();

  const int n = frames.count();
  const int width = key.width();
  std::vector<std::vector<float>> pe(n);
  std::vector<std::vector<float>> fixed_inputs(n);
  for (int i = 0; i < n; ++i) {
    pe[i] = to_float(positional_encode(frames.timestamps[i], key.pe));
    if (!learn_key) fixed_inputs[i] = keyed_input(frames.timestamps[i], key);
  }

  std::ofstream csv;
  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    csv.open(cfg.output_dir / "loss.csv", std::ios::app);
    if (!csv) throw IoError("cannot open loss.csv in " + cfg.output_dir.string());
    if (csv.tellp() == 0) csv << "epoch,loss,psnr\n";
  }

  auto rng = make_rng(cfg.seed, "train-order");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<float> grad_out, d_input(width), d_mask(width);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, psnr_sum = 0.0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      const float scale = 1.0f / static_cast<float>(stop - start);
      model_grads.fill(0.0f);
      if (learn_key) key_grads.fill(0.0f);

      for (int b = start; b < stop; ++b) {
        const int idx = order[b];
        const double t = frames.timestamps[idx];
        KeyActivations key_act;
        std::vector<float> input;
        if (learn_key) {
          key_act = key_forward(t, res.key);
          input.resize(width);
          for (int i = 0; i < width; ++i) input[i] = key_act.mask[i] * pe[idx][i];
        } else {
          input = fixed_inputs[idx];
        }
        const auto tr = forward_trace(input, res.model);
        const Frame& gt = frames.frames[idx];
        const double loss = composite_loss(view(tr.output), view(gt), cfg.alpha, &grad_out);
        if (!std::isfinite(loss)) {
          throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch));
        }
        loss_sum += loss;
        psnr_sum += psnr(tr.output, gt);
        for (auto& g : grad_out) g *= scale;
        backward(res.model, tr, grad_out, model_grads,
                 learn_key ? std::span<float>(d_input) : std::span<float>());
        if (learn_key) {
          for (int i = 0; i < width; ++i) d_mask[i] = d_input[i] * pe[idx][i];
          key_backward(res.key, key_act, d_mask, key_grads);
        }
      }
      model_opt.step(res.model.params, model_grads);
      if (learn_key) key_opt->step(res.key.params, key_grads);
      if (hooks.after_step) hooks.after_step(res.model);
    }

    EpochStats st{epoch + 1, loss_sum / n, psnr_sum / n};
    res.history.push_back(st);
    if (csv.is_open()) csv << st.epoch << ',' << st.loss << ',' << st.psnr << '\n';
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      if (hooks.checkpoint) {
        hooks.checkpoint(res.model, res.key, epoch + 1);
      } else if (!cfg.output_dir.empty()) {
        char name[40];
        std::snprintf(name, sizeof(name), "checkpoint_%05d.nvcp", epoch + 1);
        save_model(res.model, cfg.output_dir / name);
      }
    }
  }
  return res;
}

}  // namespace nervcp
