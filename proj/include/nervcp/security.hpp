#pragma once

// Cipher-image statistics (adjacent-pixel correlation, entropy, histograms)
// and the key-substitution attack harness.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nervcp/errors.hpp"
#include "nervcp/frame_io.hpp"
#include "nervcp/key_module.hpp"
#include "nervcp/metrics.hpp"
#include "nervcp/nerv_model.hpp"
#include "nervcp/parallel.hpp"
#include "nervcp/rng.hpp"
#include "nervcp/training.hpp"

namespace nervcp {

enum class Direction { kHorizontal, kVertical, kDiagonal };

inline std::string to_string(Direction d) {
  switch (d) {
    case Direction::kHorizontal: return "horizontal";
    case Direction::kVertical: return "vertical";
    case Direction::kDiagonal: return "diagonal";
  }
  return "?";
}

/// Neighbour offset (dy, dx): vertical (i+1, j), horizontal (i, j+1),
/// diagonal (i+1, j+1).
inline std::pair<int, int> neighbour_offset(Direction d) {
  switch (d) {
    case Direction::kHorizontal: return {0, 1};
    case Direction::kVertical: return {1, 0};
    case Direction::kDiagonal: return {1, 1};
  }
  return {0, 0};
}

/// Adjacent-pixel correlation with C-bar the mean of the whole frame, used
/// in both factors.
inline double correlation_coefficient(const GrayFrame& gray, Direction dir) {
  if (gray.height < 2 || gray.width < 2) {
    throw FrameTooSmall("correlation needs at least a 2x2 frame");
  }
  double mean = 0.0;
  for (auto v : gray.pixels) mean += v;
  mean /= static_cast<double>(gray.pixels.size());

  const auto [dy, dx] = neighbour_offset(dir);
  double num = 0.0, da = 0.0, db = 0.0;
  for (int y = 0; y + dy < gray.height; ++y) {
    for (int x = 0; x + dx < gray.width; ++x) {
      const double a = gray.at(y, x) - mean;
      const double b = gray.at(y + dy, x + dx) - mean;
      num += a * b;
      da += a * a;
      db += b * b;
    }
  }
  const double den = std::sqrt(da * db);
  if (den == 0.0) throw DegenerateFrame("zero variance along " + to_string(dir));
  return num / den;
}

using Histogram = std::array<std::uint64_t, 256>;

inline Histogram histogram(const GrayFrame& gray) {
  Histogram h{};
  for (auto v : gray.pixels) ++h[v];
  return h;
}

/// Shannon entropy of the 8-bit histogram, in bits.
inline double entropy(const GrayFrame& gray) {
  if (gray.pixels.empty()) throw FrameTooSmall("entropy of an empty frame");
  const auto h = histogram(gray);
  const double n = static_cast<double>(gray.pixels.size());
  double e = 0.0;
  for (auto c : h) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    e -= p * std::log2(p);
  }
  return e;
}

using PixelPair = std::pair<std::uint8_t, std::uint8_t>;

inline constexpr int kDefaultPairSamples = 600;

/// n anchors drawn uniformly with replacement, each paired with its
/// neighbour in `dir`.
inline std::vector<PixelPair> sample_adjacent_pairs(const GrayFrame& gray, int n, Direction dir,
                                                    std::uint64_t seed) {
  if (n < 1) throw InvalidCount("need at least one pair");
  const auto [dy, dx] = neighbour_offset(dir);
  if (gray.height - dy < 1 || gray.width - dx < 1) {
    throw FrameTooSmall("frame has no in-bounds " + to_string(dir) + " neighbours");
  }
  auto rng = make_rng(seed, "pairs-" + to_string(dir));
  std::uniform_int_distribution<int> ys(0, gray.height - dy - 1);
  std::uniform_int_distribution<int> xs(0, gray.width - dx - 1);
  std::vector<PixelPair> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int y = ys(rng);
    const int x = xs(rng);
    out.emplace_back(gray.at(y, x), gray.at(y + dy, x + dx));
  }
  return out;
}

/// Sample Pearson correlation of the pairs.
inline double pair_correlation(const std::vector<PixelPair>& pairs) {
  double ma = 0.0, mb = 0.0;
  for (const auto& [a, b] : pairs) {
    ma += a;
    mb += b;
  }
  ma /= static_cast<double>(pairs.size());
  mb /= static_cast<double>(pairs.size());
  double num = 0.0, va = 0.0, vb = 0.0;
  for (const auto& [a, b] : pairs) {
    num += (a - ma) * (b - mb);
    va += (a - ma) * (a - ma);
    vb += (b - mb) * (b - mb);
  }
  return num / std::sqrt(va * vb);
}

struct CorrelationReport {
  double horizontal = 0.0;
  double vertical = 0.0;
  double diagonal = 0.0;
  double entropy = 0.0;
  std::vector<PixelPair> horizontal_pairs;
  std::vector<PixelPair> vertical_pairs;
};

/// Statistics of one grayscale frame. Constant frames yield NaN
/// coefficients rather than an error so a report can still be written.
inline CorrelationReport analyze_frame(const GrayFrame& gray, int pairs, std::uint64_t seed) {
  auto cc = [&](Direction d) {
    try {
      return correlation_coefficient(gray, d);
    } catch (const DegenerateFrame&) {
      return std::nan("");
    }
  };
  CorrelationReport r;
  r.horizontal = cc(Direction::kHorizontal);
  r.vertical = cc(Direction::kVertical);
  r.diagonal = cc(Direction::kDiagonal);
  r.entropy = entropy(gray);
  r.horizontal_pairs = sample_adjacent_pairs(gray, pairs, Direction::kHorizontal, seed);
  r.vertical_pairs = sample_adjacent_pairs(gray, pairs, Direction::kVertical, seed);
  return r;
}

// Published reference statistics, carried as report labels only.
struct ReferenceStats {
  const char* label;
  double horizontal, vertical, diagonal, entropy;
};
inline constexpr ReferenceStats kReferencePlain{"plain (reference)", 0.9897, 0.9942, 0.9819, 7.625};
inline constexpr ReferenceStats kReferenceEncrypted{"encrypted (reference)", 0.8934, 0.8512, 0.7839,
                                                    5.033};

inline void to_json(nlohmann::json& j, const CorrelationReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  auto pairs = [](const std::vector<PixelPair>& ps) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& [x, y] : ps) a.push_back({x, y});
    return a;
  };
  j = nlohmann::json{{"horizontal", num(r.horizontal)},
                     {"vertical", num(r.vertical)},
                     {"diagonal", num(r.diagonal)},
                     {"entropy", r.entropy},
                     {"horizontal_pairs", pairs(r.horizontal_pairs)},
                     {"vertical_pairs", pairs(r.vertical_pairs)}};
}

// ------------------------------------------------------------- plots

/// 256x256 scatter of (value, neighbour); black dots on white.
inline GrayFrame scatter_plot(const std::vector<PixelPair>& pairs) {
  GrayFrame img(256, 256, 255);
  for (const auto& [a, b] : pairs) img.at(255 - b, a) = 0;
  return img;
}

/// 256-bin histogram, bars scaled to the tallest bin.
inline GrayFrame histogram_plot(const Histogram& h, int height = 200) {
  GrayFrame img(height, 256, 255);
  std::uint64_t peak = 1;
  for (auto c : h) peak = std::max(peak, c);
  for (int x = 0; x < 256; ++x) {
    const int bar = static_cast<int>(std::lround(static_cast<double>(h[x]) / peak * (height - 1)));
    for (int y = 0; y < bar; ++y) img.at(height - 1 - y, x) = 0;
  }
  return img;
}

// ------------------------------------------------------------- attacks

enum class NoiseKind { kGaussian, kUniform, kBernoulli, kTruncatedNormal, kConstant };

inline std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::kGaussian: return "gaussian";
    case NoiseKind::kUniform: return "uniform";
    case NoiseKind::kBernoulli: return "bernoulli";
    case NoiseKind::kTruncatedNormal: return "truncated_normal";
    case NoiseKind::kConstant: return "constant";
  }
  return "?";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
  for (auto k : {NoiseKind::kGaussian, NoiseKind::kUniform, NoiseKind::kBernoulli,
                 NoiseKind::kTruncatedNormal, NoiseKind::kConstant}) {
    if (to_string(k) == s) return k;
  }
  if (s == "truncn" || s == "truncated-normal") return NoiseKind::kTruncatedNormal;
  throw ConfigError("unknown noise kind '" + s + "'");
}

struct NoiseSpec {
  NoiseKind kind = NoiseKind::kGaussian;
  // sigma for truncated_normal, p for bernoulli (default 0.5), the fill
  // value for constant; unused otherwise.
  double param = 0.0;
  std::uint64_t seed = 0;

  std::string label() const {
    if (kind == NoiseKind::kTruncatedNormal) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "TruncN(%.2f)", param);
      return buf;
    }
    return to_string(kind);
  }
};

/// Replacement key mask: gaussian N(0,1), uniform U(-1,1), bernoulli {0,1}
/// with p = 0.5, truncated normal N(0, sigma^2) rejection-sampled into
/// [-1, 1]. `constant` fills with `param` (calibration hook).
inline KeyMask generate_noise_mask(const NoiseSpec& spec, int length) {
  if (length < 1) throw InvalidCount("mask length must be positive");
  auto rng = make_rng(spec.seed, "noise-" + to_string(spec.kind));
  KeyMask m(length);
  switch (spec.kind) {
    case NoiseKind::kGaussian: {
      std::normal_distribution<double> d(0.0, 1.0);
      for (auto& v : m) v = d(rng);
      break;
    }
    case NoiseKind::kUniform: {
      std::uniform_real_distribution<double> d(-1.0, 1.0);
      for (auto& v : m) v = d(rng);
      break;
    }
    case NoiseKind::kBernoulli: {
      std::bernoulli_distribution d(spec.param > 0.0 && spec.param < 1.0 ? spec.param : 0.5);
      for (auto& v : m) v = d(rng) ? 1.0 : 0.0;
      break;
    }
    case NoiseKind::kTruncatedNormal: {
      if (!(spec.param > 0.0)) throw ConfigError("truncated normal needs sigma > 0");
      std::normal_distribution<double> d(0.0, spec.param);
      for (auto& v : m) {
        do {
          v = d(rng);
        } while (v < -1.0 || v > 1.0);
      }
      break;
    }
    case NoiseKind::kConstant:
      for (auto& v : m) v = spec.param;
      break;
  }
  return m;
}

/// The default attack table: gaussian, uniform, bernoulli and TruncN with
/// sigma in {0.05, 0.10, 0.15, 0.20, 0.25}.
inline std::vector<NoiseSpec> default_attack_suite(std::uint64_t seed) {
  std::vector<NoiseSpec> s = {{NoiseKind::kGaussian, 0.0, seed},
                              {NoiseKind::kUniform, 0.0, seed},
                              {NoiseKind::kBernoulli, 0.5, seed}};
  for (double sigma : {0.05, 0.10, 0.15, 0.20, 0.25}) {
    s.push_back({NoiseKind::kTruncatedNormal, sigma, seed});
  }
  return s;
}

/// Adversary's decode without the key module: raw positional embedding.
inline Frame decrypt_without_key(const NervModel& model, double t) {
  return forward(positional_encode(t, model.config.pe), model);
}

inline void check_attack_inputs(const NervModel& model, const FrameSequence& frames) {
  if (frames.count() == 0 || frames.height() != model.config.output_height() ||
      frames.width() != model.config.output_width()) {
    throw ConfigMismatch("frames do not match the model output resolution");
  }
}

/// Decodes each timestamp with a fresh noise mask in place of the key mask
/// (seed XOR frame index) and averages quality against the plaintext.
inline QualityReport noise_attack(const NervModel& model, const FrameSequence& frames,
                                  const NoiseSpec& spec) {
  check_attack_inputs(model, frames);
  const int n = frames.count();
  std::vector<Frame> decoded(n);
  parallel_for(n, [&](int i) {
    NoiseSpec per_frame = spec;
    per_frame.seed = spec.seed ^ static_cast<std::uint64_t>(i);
    const auto mask = generate_noise_mask(per_frame, model.config.pe.embedding_length());
    auto e = positional_encode(frames.timestamps[i], model.config.pe);
    for (std::size_t k = 0; k < e.size(); ++k) e[k] *= mask[k];
    decoded[i] = forward(e, model);
  });
  return mean_quality(decoded, frames.frames);
}

inline QualityReport keyless_quality(const NervModel& model, const FrameSequence& frames) {
  check_attack_inputs(model, frames);
  std::vector<Frame> decoded(frames.count());
  parallel_for(frames.count(),
               [&](int i) { decoded[i] = decrypt_without_key(model, frames.timestamps[i]); });
  return mean_quality(decoded, frames.frames);
}

inline QualityReport keyed_quality(const NervModel& model, const KeyModule& key,
                                   const FrameSequence& frames) {
  check_attack_inputs(model, frames);
  std::vector<Frame> decoded(frames.count());
  parallel_for(frames.count(),
               [&](int i) { decoded[i] = decode_with_key(model, key, frames.timestamps[i]); });
  return mean_quality(decoded, frames.frames);
}

inline void to_json(nlohmann::json& j, const QualityReport& q) {
  j = nlohmann::json{{"psnr", q.psnr}, {"ssim", q.ssim}, {"ms_ssim", q.ms_ssim}};
}

}  // namespace nervcp
