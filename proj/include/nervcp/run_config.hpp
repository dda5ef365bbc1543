#pragma once

// Structured run configuration (JSON). Every section is optional; unknown
// keys anywhere are rejected before any work starts.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nervcp/errors.hpp"
#include "nervcp/nerv_model.hpp"
#include "nervcp/security.hpp"
#include "nervcp/training.hpp"

namespace nervcp {

struct KeyPretrainConfig {
  int epochs = 30;
  double lr = 1e-4;
  int grid = 8;  // timestamps i/grid, i = 1..grid
};

struct PruneConfig {
  double sparsity = 0.2;
  int finetune_epochs = 0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  KeyPretrainConfig key_pretrain;
  PruneConfig prune;
  int quant_bit = 8;
  std::vector<NoiseSpec> attacks;  // empty = default suite
  int analysis_pairs = kDefaultPairSamples;
  int analysis_frame = 0;
  int resize_height = 0;  // 0 = keep source size
  int resize_width = 0;

  void validate() const {
    model.validate();
    train.validate();
    if (key_pretrain.epochs < 0) throw ConfigError("key_pretrain.epochs must be >= 0");
    if (!(key_pretrain.lr > 0.0)) throw ConfigError("key_pretrain.lr must be positive");
    if (key_pretrain.grid < 1) throw ConfigError("key_pretrain.grid must be >= 1");
    if (!(prune.sparsity >= 0.0 && prune.sparsity <= 1.0)) {
      throw ConfigError("prune.sparsity must be in [0, 1]");
    }
    if (prune.finetune_epochs < 0) throw ConfigError("prune.finetune_epochs must be >= 0");
    if (quant_bit < 1 || quant_bit > 16) throw ConfigError("quantize.bit must be in [1, 16]");
    for (const auto& a : attacks) {
      if (a.kind == NoiseKind::kTruncatedNormal && !(a.param > 0.0)) {
        throw ConfigError("truncated_normal attack needs sigma > 0");
      }
    }
    if (analysis_pairs < 1) throw ConfigError("analysis.pairs must be >= 1");
    if (analysis_frame < 0) throw ConfigError("analysis.frame must be >= 0");
    if ((resize_height == 0) != (resize_width == 0) || resize_height < 0 || resize_width < 0) {
      throw ConfigError("resize needs both height and width > 0");
    }
  }

  std::vector<NoiseSpec> attack_suite() const {
    if (attacks.empty()) return default_attack_suite(seed);
    auto s = attacks;
    for (auto& a : s) a.seed = seed;
    return s;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"alpha", c.alpha},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"key_mode", to_string(c.key_mode)},
                     {"checkpoint_every", c.checkpoint_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  detail::reject_unknown_keys(j,
                              {"epochs", "batch_size", "lr", "alpha", "beta1", "beta2",
                               "key_mode", "checkpoint_every"},
                              "train");
  detail::read_opt(j, "epochs", c.epochs);
  detail::read_opt(j, "batch_size", c.batch_size);
  detail::read_opt(j, "lr", c.lr);
  detail::read_opt(j, "alpha", c.alpha);
  detail::read_opt(j, "beta1", c.beta1);
  detail::read_opt(j, "beta2", c.beta2);
  detail::read_opt(j, "checkpoint_every", c.checkpoint_every);
  if (j.contains("key_mode")) c.key_mode = key_mode_from_string(j.at("key_mode").get<std::string>());
}

inline void to_json(nlohmann::json& j, const NoiseSpec& n) {
  j = nlohmann::json{{"kind", to_string(n.kind)}, {"param", n.param}};
}

inline void from_json(const nlohmann::json& j, NoiseSpec& n) {
  detail::reject_unknown_keys(j, {"kind", "param", "sigma"}, "attack");
  if (!j.contains("kind")) throw ConfigError("attack entry needs a kind");
  n.kind = noise_kind_from_string(j.at("kind").get<std::string>());
  detail::read_opt(j, "param", n.param);
  detail::read_opt(j, "sigma", n.param);
  if (n.kind == NoiseKind::kBernoulli && n.param == 0.0) n.param = 0.5;
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{
      {"seed", c.seed},
      {"model", c.model},
      {"train", c.train},
      {"key_pretrain",
       {{"epochs", c.key_pretrain.epochs}, {"lr", c.key_pretrain.lr}, {"grid", c.key_pretrain.grid}}},
      {"prune",
       {{"sparsity", c.prune.sparsity}, {"finetune_epochs", c.prune.finetune_epochs}}},
      {"quantize", {{"bit", c.quant_bit}}},
      {"attacks", c.attacks},
      {"analysis", {{"pairs", c.analysis_pairs}, {"frame", c.analysis_frame}}},
      {"resize", {c.resize_height, c.resize_width}}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  detail::reject_unknown_keys(j,
                              {"seed", "model", "train", "key_pretrain", "prune", "quantize",
                               "attacks", "analysis", "resize"},
                              "run config");
  detail::read_opt(j, "seed", c.seed);
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("train")) {
    const auto seed = c.train.seed;
    c.train = j.at("train").get<TrainConfig>();
    c.train.seed = seed;
  }
  if (j.contains("key_pretrain")) {
    const auto& k = j.at("key_pretrain");
    detail::reject_unknown_keys(k, {"epochs", "lr", "grid"}, "key_pretrain");
    detail::read_opt(k, "epochs", c.key_pretrain.epochs);
    detail::read_opt(k, "lr", c.key_pretrain.lr);
    detail::read_opt(k, "grid", c.key_pretrain.grid);
  }
  if (j.contains("prune")) {
    const auto& p = j.at("prune");
    detail::reject_unknown_keys(p, {"sparsity", "finetune_epochs"}, "prune");
    detail::read_opt(p, "sparsity", c.prune.sparsity);
    detail::read_opt(p, "finetune_epochs", c.prune.finetune_epochs);
  }
  if (j.contains("quantize")) {
    const auto& q = j.at("quantize");
    detail::reject_unknown_keys(q, {"bit"}, "quantize");
    detail::read_opt(q, "bit", c.quant_bit);
  }
  if (j.contains("attacks")) {
    if (!j.at("attacks").is_array()) throw ConfigError("attacks must be a list");
    c.attacks.clear();
    for (const auto& a : j.at("attacks")) c.attacks.push_back(a.get<NoiseSpec>());
  }
  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    detail::reject_unknown_keys(a, {"pairs", "frame"}, "analysis");
    detail::read_opt(a, "pairs", c.analysis_pairs);
    detail::read_opt(a, "frame", c.analysis_frame);
  }
  if (j.contains("resize")) {
    std::vector<int> r;
    detail::read_opt(j, "resize", r);
    if (r.size() != 2) throw ConfigError("resize must be [height, width]");
    c.resize_height = r[0];
    c.resize_width = r[1];
  }
  c.train.seed = c.seed;
}

/// Parses and validates a run config document.
inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig c;
  try {
    c = j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInput("cannot open config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

}  // namespace nervcp
