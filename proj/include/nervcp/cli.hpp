#pragma once

// nervcp command-line driver. Subcommands:
//   train-key  encrypt  decrypt  prune  quantize  analyze  attack  metrics  bpp
// Exit codes: 0 success, 1 validation/usage error, 2 runtime error.
// Every run writes <out>/run.json; `nervcp --replay run.json [--out DIR]`
// re-executes it with the recorded effective configuration.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <opencv2/core/version.hpp>

#include "nervcp/compression.hpp"
#include "nervcp/errors.hpp"
#include "nervcp/frame_io.hpp"
#include "nervcp/key_module.hpp"
#include "nervcp/metrics.hpp"
#include "nervcp/model_io.hpp"
#include "nervcp/nerv_model.hpp"
#include "nervcp/quantization.hpp"
#include "nervcp/run_config.hpp"
#include "nervcp/security.hpp"
#include "nervcp/training.hpp"

namespace nervcp::cli {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;
using nlohmann::json;

inline json version_info() {
  std::ostringstream eigen;
  eigen << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION;
  return {{"nervcp", kVersion},
          {"model_format", kModelFormatVersion},
          {"key_format", kKeyFormatVersion},
          {"eigen", eigen.str()},
          {"opencv", CV_VERSION},
          {"compiler", __VERSION__}};
}

inline void write_json(const json& j, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

inline std::pair<int, int> parse_size(const std::string& s, const char* what) {
  int h = 0, w = 0;
  char x = 0;
  std::istringstream in(s);
  if (!(in >> h >> x >> w) || (x != 'x' && x != 'X') || !in.eof() || h < 1 || w < 1) {
    throw UsageError(std::string(what) + " must look like HxW, got '" + s + "'");
  }
  return {h, w};
}

/// "kind" or "kind:param", e.g. truncated_normal:0.1.
inline NoiseSpec parse_noise(const std::string& s) {
  NoiseSpec n;
  const auto colon = s.find(':');
  n.kind = noise_kind_from_string(s.substr(0, colon));
  if (colon != std::string::npos) {
    try {
      n.param = std::stod(s.substr(colon + 1));
    } catch (const std::exception&) {
      throw UsageError("bad noise parameter in '" + s + "'");
    }
  } else if (n.kind == NoiseKind::kBernoulli) {
    n.param = 0.5;
  }
  return n;
}

// Command-line overrides; unset fields leave the config untouched.
struct Flags {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;

  // model
  std::optional<int> c1, c2, min_channels, mlp_hidden, l;
  std::optional<double> b;
  std::vector<int> factors;
  std::string base;
  std::string resize;

  // training
  std::optional<int> epochs, batch_size, checkpoint_every, grid, finetune_epochs;
  std::optional<double> lr, alpha;
  std::string key_mode;

  // paths and per-command values
  std::string input, key, model, pred, gt;
  bool keyless = false;
  std::vector<double> t;
  std::optional<int> count, frame, pairs, bit;
  std::optional<double> sparsity;
  std::vector<std::string> noise;

  // bpp
  std::optional<double> params, qb, pixels;
};

inline void apply_model_flags(const Flags& f, RunConfig& c) {
  if (f.c1) c.model.c1 = *f.c1;
  if (f.c2) c.model.c2 = *f.c2;
  if (f.min_channels) c.model.min_channels = *f.min_channels;
  if (f.mlp_hidden) c.model.mlp_hidden = *f.mlp_hidden;
  if (f.b) c.model.pe.base = *f.b;
  if (f.l) c.model.pe.frequencies = *f.l;
  if (!f.factors.empty()) c.model.upscale_factors = f.factors;
  if (!f.base.empty()) {
    std::tie(c.model.base_height, c.model.base_width) = parse_size(f.base, "--base");
  }
  if (!f.resize.empty()) std::tie(c.resize_height, c.resize_width) = parse_size(f.resize, "--resize");
}

inline void apply_train_flags(const Flags& f, RunConfig& c, bool for_key_pretrain) {
  if (for_key_pretrain) {
    if (f.epochs) c.key_pretrain.epochs = *f.epochs;
    if (f.lr) c.key_pretrain.lr = *f.lr;
    if (f.grid) c.key_pretrain.grid = *f.grid;
    return;
  }
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.lr) c.train.lr = *f.lr;
  if (f.alpha) c.train.alpha = *f.alpha;
  if (f.batch_size) c.train.batch_size = *f.batch_size;
  if (f.checkpoint_every) c.train.checkpoint_every = *f.checkpoint_every;
  if (!f.key_mode.empty()) c.train.key_mode = key_mode_from_string(f.key_mode);
  if (f.grid) c.key_pretrain.grid = *f.grid;
  if (f.finetune_epochs) c.prune.finetune_epochs = *f.finetune_epochs;
}

inline void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

inline std::optional<std::pair<int, int>> resize_target(const RunConfig& c) {
  if (c.resize_height == 0) return std::nullopt;
  return std::pair{c.resize_height, c.resize_width};
}

// ----------------------------------------------------------- commands

struct Context {
  RunConfig config;
  Flags flags;
  fs::path out;
  std::ostream& log;
};

inline void cmd_train_key(Context& ctx) {
  const auto& c = ctx.config;
  const auto grid = normalize_timestamps(c.key_pretrain.grid);
  const auto res =
      pretrain_key(c.model.pe, grid, c.key_pretrain.epochs, c.key_pretrain.lr, c.seed);
  save_key(res.key, ctx.out / "key.nvkey");
  const double final_loss = res.epoch_loss.empty() ? res.initial_loss : res.epoch_loss.back();
  write_json({{"initial_mse", res.initial_loss},
              {"final_mse", final_loss},
              {"ratio", final_loss / res.initial_loss},
              {"epoch_mse", res.epoch_loss}},
             ctx.out / "key_report.json");
  ctx.log << "key: " << (ctx.out / "key.nvkey").string() << "  mse " << res.initial_loss
          << " -> " << final_loss << '\n';
}

inline NervModel load_model_checked(const std::string& path) {
  require(path, "--model");
  return load_model(path);
}

inline void cmd_encrypt(Context& ctx) {
  auto& c = ctx.config;
  require(ctx.flags.input, "--input");
  const auto frames = load_frames(ctx.flags.input, resize_target(c));

  KeyModule key;
  if (!ctx.flags.key.empty()) {
    key = load_key(ctx.flags.key);
    // The key file fixes the encoding unless the flags asked for another one.
    if (!ctx.flags.b && !ctx.flags.l) c.model.pe = key.pe;
  } else if (c.train.key_mode == KeyMode::kLearnable) {
    key = init_key_module(c.model.pe, c.seed);
  } else {
    key = pretrain_key(c.model.pe, normalize_timestamps(c.key_pretrain.grid),
                       c.key_pretrain.epochs, c.key_pretrain.lr, c.seed)
              .key;
  }

  const auto model0 = build_model(c.model, c.seed);
  TrainConfig tc = c.train;
  tc.output_dir = ctx.out;
  const auto res = train_video(frames, key, model0, tc);

  save_model(res.model, ctx.out / "model.nvcp");
  if (ctx.flags.key.empty() || c.train.key_mode == KeyMode::kLearnable) {
    save_key(res.key, ctx.out / "key.nvkey");
  }
  const auto keyed = keyed_quality(res.model, res.key, frames);
  const auto keyless = keyless_quality(res.model, frames);
  write_json({{"parameters", res.model.parameter_count()},
              {"frames", frames.count()},
              {"resolution", {frames.height(), frames.width()}},
              {"key_mode", to_string(c.train.key_mode)},
              {"keyed", keyed},
              {"keyless", keyless},
              {"psnr_gap", keyed.psnr - keyless.psnr}},
             ctx.out / "encrypt_report.json");
  ctx.log << std::fixed << std::setprecision(2) << "model: " << res.model.parameter_count()
          << " params  keyed " << keyed.psnr << " dB  keyless " << keyless.psnr << " dB\n";
}

inline std::vector<double> decode_timestamps(const Flags& f) {
  if (!f.t.empty() && f.count) throw UsageError("use either --t or --count");
  if (!f.t.empty()) {
    for (double t : f.t) check_timestamp(t);
    return f.t;
  }
  if (f.count) return normalize_timestamps(*f.count);
  throw UsageError("one of --t or --count is required");
}

inline void cmd_decrypt(Context& ctx) {
  const auto& f = ctx.flags;
  if (f.keyless == !f.key.empty()) throw UsageError("pass exactly one of --key or --keyless");
  const auto model = load_model_checked(f.model);
  const auto ts = decode_timestamps(f);
  std::optional<KeyModule> key;
  if (!f.keyless) {
    key = load_key(f.key);
    if (!(key->pe == model.config.pe)) {
      throw ConfigMismatch("key positional encoding differs from the model's");
    }
  }
  std::vector<Frame> out(ts.size());
  parallel_for(static_cast<int>(ts.size()), [&](int i) {
    out[i] = key ? decode_with_key(model, *key, ts[i]) : decrypt_without_key(model, ts[i]);
  });
  save_frames(out, ctx.out);
  ctx.log << "wrote " << out.size() << (f.keyless ? " keyless" : " keyed") << " frame(s) to "
          << ctx.out.string() << '\n';
}

inline void cmd_prune(Context& ctx) {
  auto& c = ctx.config;
  const auto& f = ctx.flags;
  const auto model = load_model_checked(f.model);
  auto pr = prune_global(model, c.prune.sparsity);
  json report{{"target_sparsity", c.prune.sparsity},
              {"threshold", pr.spec.threshold},
              {"pruned", pr.spec.pruned_count()},
              {"parameters", model.parameter_count()}};

  NervModel result = pr.model;
  if (c.prune.finetune_epochs > 0) {
    require(f.input, "--input (for fine-tuning)");
    require(f.key, "--key (for fine-tuning)");
    const auto frames = load_frames(f.input, resize_target(c));
    const auto key = load_key(f.key);
    TrainConfig tc = c.train;
    tc.epochs = c.prune.finetune_epochs;
    result = finetune_pruned(pr.model, pr.spec, frames, key, tc);
    report["raw_pruned"] = keyed_quality(pr.model, key, frames);
    report["finetuned"] = keyed_quality(result, key, frames);
  }
  report["achieved_sparsity"] = zero_fraction(result);
  save_model(result, ctx.out / "pruned.nvcp");
  write_json(report, ctx.out / "prune_report.json");
  ctx.log << "pruned " << pr.spec.pruned_count() << " of " << model.parameter_count()
          << " parameters\n";
}

inline void cmd_quantize(Context& ctx) {
  const auto& c = ctx.config;
  const auto& f = ctx.flags;
  const auto model = load_model_checked(f.model);
  const auto qm = quantize_model(model, c.quant_bit);
  save_model(qm, ctx.out / "quantized.nvcp");

  const auto restored = dequantize_model(qm);
  double max_err = 0.0, max_step = 0.0;
  for (std::size_t k = 0; k < model.params.tensors.size(); ++k) {
    const auto& a = model.params.tensors[k].data;
    const auto& b = restored.params.tensors[k].data;
    for (std::size_t i = 0; i < a.size(); ++i) {
      max_err = std::max(max_err, static_cast<double>(std::abs(a[i] - b[i])));
    }
    max_step = std::max(max_step, qm.tensors[k].scale());
  }
  json report{{"bit", c.quant_bit}, {"max_abs_error", max_err}, {"max_step", max_step}};

  // Kept fraction: 1 for dense models, lower for pruned inputs.
  const double kept = 1.0 - zero_fraction(model);
  std::uint64_t n_pixel = 0;
  if (f.pixels) {
    n_pixel = static_cast<std::uint64_t>(*f.pixels);
  } else if (f.count) {
    n_pixel = static_cast<std::uint64_t>(*f.count) * model.config.output_height() *
              model.config.output_width();
  }
  if (n_pixel > 0) {
    report["compression"] =
        make_compression_report(model.parameter_count(), kept, c.quant_bit, n_pixel);
  }
  write_json(report, ctx.out / "quantize_report.json");
  ctx.log << "quantized to " << c.quant_bit << " bit, max error " << max_err << '\n';
}

inline json analysis_json(const GrayFrame& g, const RunConfig& c, const fs::path& dir,
                          const std::string& prefix) {
  const auto r = analyze_frame(g, c.analysis_pairs, c.seed);
  json j = r;
  j["diagonal_pairs"] = json::array();
  for (const auto& [a, b] :
       sample_adjacent_pairs(g, c.analysis_pairs, Direction::kDiagonal, c.seed)) {
    j["diagonal_pairs"].push_back({a, b});
  }
  save_gray(g, dir / (prefix + "_gray.png"));
  save_gray(scatter_plot(r.horizontal_pairs), dir / (prefix + "_scatter_horizontal.png"));
  save_gray(scatter_plot(r.vertical_pairs), dir / (prefix + "_scatter_vertical.png"));
  save_gray(histogram_plot(histogram(g)), dir / (prefix + "_histogram.png"));
  return j;
}

inline json reference_json(const ReferenceStats& r) {
  return {{"label", r.label},
          {"horizontal", r.horizontal},
          {"vertical", r.vertical},
          {"diagonal", r.diagonal},
          {"entropy", r.entropy}};
}

inline void cmd_analyze(Context& ctx) {
  const auto& c = ctx.config;
  const auto& f = ctx.flags;
  const auto model = load_model_checked(f.model);

  std::optional<FrameSequence> frames;
  std::vector<double> ts;
  if (!f.input.empty()) {
    frames = load_frames(f.input, resize_target(c));
    ts = frames->timestamps;
  } else {
    ts = decode_timestamps(f);
  }
  if (c.analysis_frame >= static_cast<int>(ts.size())) {
    throw InvalidCount("analysis frame index out of range");
  }
  const double t = ts[c.analysis_frame];

  json report{{"frame_index", c.analysis_frame},
              {"timestamp", t},
              {"references", {reference_json(kReferencePlain), reference_json(kReferenceEncrypted)}}};
  const Frame encrypted = decrypt_without_key(model, t);
  save_frame(encrypted, ctx.out / "encrypted_frame.png");
  report["encrypted"] = analysis_json(to_grayscale(encrypted), c, ctx.out, "encrypted");
  if (frames) {
    report["plain"] =
        analysis_json(to_grayscale(frames->frames[c.analysis_frame]), c, ctx.out, "plain");
  }
  if (!f.key.empty()) {
    const Frame decrypted = decode_with_key(model, load_key(f.key), t);
    save_frame(decrypted, ctx.out / "decrypted_frame.png");
    report["decrypted"] = analysis_json(to_grayscale(decrypted), c, ctx.out, "decrypted");
  }
  write_json(report, ctx.out / "analysis.json");
  const auto& e = report["encrypted"];
  ctx.log << std::fixed << std::setprecision(4) << "encrypted frame: H " << e["horizontal"]
          << "  V " << e["vertical"] << "  D " << e["diagonal"] << "  entropy " << e["entropy"]
          << '\n';
}

inline void cmd_attack(Context& ctx) {
  const auto& c = ctx.config;
  const auto& f = ctx.flags;
  require(f.input, "--input");
  const auto model = load_model_checked(f.model);
  const auto frames = load_frames(f.input, resize_target(c));

  json rows = json::array();
  std::optional<QualityReport> keyed;
  if (!f.key.empty()) keyed = keyed_quality(model, load_key(f.key), frames);
  auto row = [&](const std::string& label, const QualityReport& q) {
    json r{{"attack", label}, {"psnr", q.psnr}, {"ssim", q.ssim}, {"ms_ssim", q.ms_ssim}};
    if (keyed) r["psnr_drop"] = keyed->psnr - q.psnr;
    rows.push_back(r);
    ctx.log << std::fixed << std::setprecision(2) << std::setw(18) << std::left << label
            << std::right << q.psnr << " dB  ssim " << std::setprecision(4) << q.ssim << '\n';
  };
  if (keyed) row("keyed", *keyed);
  row("keyless", keyless_quality(model, frames));
  for (const auto& spec : c.attack_suite()) row(spec.label(), noise_attack(model, frames, spec));
  write_json({{"attacks", rows}}, ctx.out / "attack.json");
}

inline void cmd_metrics(Context& ctx) {
  const auto& f = ctx.flags;
  require(f.pred, "--pred");
  require(f.gt, "--gt");
  const auto gt = load_frames(f.gt);
  const auto pred = load_frames(f.pred, std::pair{gt.height(), gt.width()});
  if (pred.count() != gt.count()) {
    throw ShapeMismatch("prediction has " + std::to_string(pred.count()) + " frames, ground truth " +
                        std::to_string(gt.count()));
  }
  json per = json::array();
  for (int i = 0; i < gt.count(); ++i) per.push_back(quality_metrics(pred.frames[i], gt.frames[i]));
  const auto mean = mean_quality(pred.frames, gt.frames);
  write_json({{"mean", mean}, {"per_frame", per}}, ctx.out / "metrics.json");
  ctx.log << std::fixed << std::setprecision(4) << "psnr " << mean.psnr << "  ssim " << mean.ssim
          << "  ms_ssim " << mean.ms_ssim << '\n';
}

inline void cmd_bpp(Context& ctx) {
  const auto& f = ctx.flags;
  if (!f.params || !f.qb || !f.pixels) throw UsageError("--params, --qb and --pixels are required");
  const double sparsity = f.sparsity.value_or(1.0);
  const double value = bpp(*f.params, sparsity, *f.qb, *f.pixels);
  write_json({{"p_theta", *f.params},
              {"sparsity", sparsity},
              {"qb", *f.qb},
              {"n_pixel", *f.pixels},
              {"bpp", value}},
             ctx.out / "bpp.json");
  ctx.log << std::setprecision(6) << std::fixed << value << '\n';
}

// ------------------------------------------------------------ driver

struct Command {
  const char* name;
  const char* help;
  void (*fn)(Context&);
};

inline const std::vector<Command>& commands() {
  static const std::vector<Command> list = {
      {"train-key", "pretrain a fixed key module on a timestamp grid", cmd_train_key},
      {"encrypt", "fit the video network to frames through the key path", cmd_encrypt},
      {"decrypt", "render frames with the key (or --keyless)", cmd_decrypt},
      {"prune", "global magnitude pruning, optional fine-tuning", cmd_prune},
      {"quantize", "min-max quantize a model", cmd_quantize},
      {"analyze", "correlation / entropy / histogram of a cipher frame", cmd_analyze},
      {"attack", "noise-key substitution attacks", cmd_attack},
      {"metrics", "PSNR / SSIM / MS-SSIM between two frame sets", cmd_metrics},
      {"bpp", "bits per pixel of a compressed model", cmd_bpp},
  };
  return list;
}

inline void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON run config");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--seed", f.seed, "run seed");
}

inline void add_model_options(CLI::App* sub, Flags& f) {
  sub->add_option("--c1", f.c1, "stem channels");
  sub->add_option("--c2", f.c2, "first block channels");
  sub->add_option("--min-channels", f.min_channels, "channel floor");
  sub->add_option("--mlp-hidden", f.mlp_hidden, "stem hidden width");
  sub->add_option("--factors", f.factors, "upscale factors")->delimiter(',');
  sub->add_option("--base", f.base, "base grid HxW");
  sub->add_option("--pe-base", f.b, "positional-encoding base b");
  sub->add_option("--pe-l", f.l, "positional-encoding frequencies l");
}

inline void add_train_options(CLI::App* sub, Flags& f) {
  sub->add_option("--epochs", f.epochs, "training epochs");
  sub->add_option("--lr", f.lr, "learning rate");
  sub->add_option("--alpha", f.alpha, "L1 weight in the composite loss");
  sub->add_option("--batch-size", f.batch_size, "frames per optimizer step");
  sub->add_option("--key-mode", f.key_mode, "FAE or LAE");
  sub->add_option("--checkpoint-every", f.checkpoint_every, "epochs between checkpoints");
  sub->add_option("--grid", f.grid, "key pretraining grid size");
}

inline void build_app(CLI::App& app, Flags& f) {
  app.require_subcommand(1, 1);
  for (const auto& cmd : commands()) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    add_common(sub, f);
    const std::string n = cmd.name;
    if (n == "train-key") {
      sub->add_option("--grid", f.grid, "timestamps on the grid");
      sub->add_option("--epochs", f.epochs, "pretraining epochs");
      sub->add_option("--lr", f.lr, "learning rate");
      sub->add_option("--pe-base", f.b, "positional-encoding base b");
      sub->add_option("--pe-l", f.l, "positional-encoding frequencies l");
    } else if (n == "encrypt") {
      sub->add_option("--input", f.input, "frame directory or .y4m");
      sub->add_option("--key", f.key, "key file (pretrained inline when absent)");
      sub->add_option("--resize", f.resize, "resize frames to HxW");
      add_model_options(sub, f);
      add_train_options(sub, f);
    } else if (n == "decrypt") {
      sub->add_option("--model", f.model, "model file");
      sub->add_option("--key", f.key, "key file");
      sub->add_flag("--keyless", f.keyless, "decode the raw positional embedding");
      sub->add_option("--t", f.t, "timestamp(s) in (0, 1]");
      sub->add_option("--count", f.count, "render the grid i/N, i = 1..N");
    } else if (n == "prune") {
      sub->add_option("--model", f.model, "model file");
      sub->add_option("--sparsity", f.sparsity, "fraction of parameters to zero");
      sub->add_option("--finetune-epochs", f.finetune_epochs, "masked fine-tuning epochs");
      sub->add_option("--input", f.input, "frames for fine-tuning");
      sub->add_option("--key", f.key, "key for fine-tuning");
      sub->add_option("--resize", f.resize, "resize frames to HxW");
      sub->add_option("--lr", f.lr, "fine-tuning learning rate");
      sub->add_option("--alpha", f.alpha, "L1 weight in the composite loss");
    } else if (n == "quantize") {
      sub->add_option("--model", f.model, "model file");
      sub->add_option("--bit", f.bit, "bits per parameter");
      sub->add_option("--pixels", f.pixels, "pixel count for the bpp report");
      sub->add_option("--count", f.count, "frame count for the bpp report");
    } else if (n == "analyze") {
      sub->add_option("--model", f.model, "model file");
      sub->add_option("--key", f.key, "key file (adds the decrypted frame)");
      sub->add_option("--input", f.input, "plaintext frames");
      sub->add_option("--resize", f.resize, "resize frames to HxW");
      sub->add_option("--t", f.t, "timestamp(s) when no input is given");
      sub->add_option("--count", f.count, "grid size when no input is given");
      sub->add_option("--frame", f.frame, "frame index to analyze");
      sub->add_option("--pairs", f.pairs, "adjacent pairs per direction");
    } else if (n == "attack") {
      sub->add_option("--model", f.model, "model file");
      sub->add_option("--input", f.input, "plaintext frames");
      sub->add_option("--key", f.key, "key file for the keyed reference row");
      sub->add_option("--resize", f.resize, "resize frames to HxW");
      sub->add_option("--noise", f.noise, "kind[:param]; default suite when absent");
    } else if (n == "metrics") {
      sub->add_option("--pred", f.pred, "predicted frames");
      sub->add_option("--gt", f.gt, "ground-truth frames");
    } else if (n == "bpp") {
      sub->add_option("--params", f.params, "parameter count");
      sub->add_option("--sparsity", f.sparsity, "kept fraction (1 = dense)");
      sub->add_option("--qb", f.qb, "bits per parameter");
      sub->add_option("--pixels", f.pixels, "total pixel count");
    }
  }
}

inline RunConfig effective_config(const std::string& command, const Flags& f,
                                  const std::optional<RunConfig>& preset) {
  RunConfig c = preset ? *preset : (f.config.empty() ? RunConfig{} : load_run_config(f.config));
  if (f.seed) c.seed = *f.seed;
  apply_model_flags(f, c);
  apply_train_flags(f, c, command == "train-key");
  if (f.sparsity && command == "prune") c.prune.sparsity = *f.sparsity;
  if (f.bit) c.quant_bit = *f.bit;
  if (f.frame) c.analysis_frame = *f.frame;
  if (f.pairs) c.analysis_pairs = *f.pairs;
  if (!f.noise.empty()) {
    c.attacks.clear();
    for (const auto& s : f.noise) c.attacks.push_back(parse_noise(s));
  }
  c.train.seed = c.seed;
  c.validate();
  return c;
}

inline int run_impl(std::vector<std::string> args, std::ostream& out, std::ostream& err,
                    const std::optional<RunConfig>& preset) {
  CLI::App app{"nervcp: key-controllable neural video representation", "nervcp"};
  app.set_version_flag("--version", kVersion);
  Flags f;
  build_app(app, f);

  const std::vector<std::string> recorded = args;
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Context ctx{effective_config(command, f, preset), f, f.out, out};
    fs::create_directories(ctx.out);
    write_json({{"command", command},
                {"argv", recorded},
                {"seed", ctx.config.seed},
                {"config", ctx.config},
                {"versions", version_info()}},
               ctx.out / "run.json");
    for (const auto& cmd : commands()) {
      if (command == cmd.name) cmd.fn(ctx);
    }
    return 0;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.get_subcommand(command)->help();
    return 1;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

/// Re-executes a recorded run with its effective config; --out may redirect
/// the outputs.
inline int replay(const fs::path& run_json, const std::optional<std::string>& out_dir,
                  std::ostream& out, std::ostream& err) {
  json j;
  try {
    std::ifstream in(run_json);
    if (!in) throw MissingInput("cannot open " + run_json.string());
    j = json::parse(in);
    auto args = j.at("argv").get<std::vector<std::string>>();
    const auto config = j.at("config").get<RunConfig>();
    // Flags were folded into the recorded config; --config would re-read a file.
    std::vector<std::string> kept;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" || (out_dir && args[i] == "--out")) {
        ++i;
        continue;
      }
      if (args[i].rfind("--config=", 0) == 0 || (out_dir && args[i].rfind("--out=", 0) == 0)) {
        continue;
      }
      kept.push_back(args[i]);
    }
    if (out_dir) {
      kept.push_back("--out");
      kept.push_back(*out_dir);
    }
    return run_impl(kept, out, err, config);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const json::exception& e) {
    err << "error: bad run record: " << e.what() << '\n';
    return 1;
  }
}

/// Entry point. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  if (!args.empty() && args[0] == "--replay") {
    if (args.size() != 2 && !(args.size() == 4 && args[2] == "--out")) {
      err << "usage: nervcp --replay run.json [--out DIR]\n";
      return 1;
    }
    return replay(args[1], args.size() == 4 ? std::optional(args[3]) : std::nullopt, out, err);
  }
  return run_impl(args, out, err, std::nullopt);
}

}  // namespace nervcp::cli
