#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "nervcp/parallel.hpp"
#include "nervcp/security.hpp"
#include "support/synthetic_video.hpp"

using namespace nervcp;
using nervcp::testing::synthetic_video;
using nervcp::testing::tiny_model_config;

namespace {

GrayFrame random_gray(int h, int w, std::uint32_t seed) {
  GrayFrame g(h, w);
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& v : g.pixels) v = static_cast<std::uint8_t>(d(rng));
  return g;
}

// Smooth ramp plus mild noise: strongly but not perfectly correlated.
GrayFrame smooth_gray(int h, int w, std::uint32_t seed) {
  GrayFrame g(h, w);
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> noise(-8, 8);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = 120 + 100 * std::sin(0.05 * x) * std::cos(0.04 * y) + noise(rng);
      g.at(y, x) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
  return g;
}

// Direct Pearson correlation over all neighbour pairs, each side with its
// own mean (textbook form).
double pearson_oracle(const GrayFrame& g, int dy, int dx) {
  std::vector<double> a, b;
  for (int y = 0; y + dy < g.height; ++y) {
    for (int x = 0; x + dx < g.width; ++x) {
      a.push_back(g.at(y, x));
      b.push_back(g.at(y + dy, x + dx));
    }
  }
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / b.size();
  double num = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return num / std::sqrt(va * vb);
}

}  // namespace

TEST(Entropy, KnownDistributions) {
  EXPECT_DOUBLE_EQ(entropy(GrayFrame(8, 8, 42)), 0.0);
  GrayFrame all(16, 16);
  for (int i = 0; i < 256; ++i) all.pixels[i] = static_cast<std::uint8_t>(i);
  EXPECT_NEAR(entropy(all), 8.0, 1e-12);
  GrayFrame half(4, 4, 0);
  std::fill(half.pixels.begin(), half.pixels.begin() + 8, 200);
  EXPECT_NEAR(entropy(half), 1.0, 1e-12);
  EXPECT_THROW(entropy(GrayFrame{}), FrameTooSmall);
}

TEST(Entropy, BoundedAndPermutationInvariant) {
  auto g = random_gray(32, 40, 1);
  const double e = entropy(g);
  EXPECT_GE(e, 0.0);
  EXPECT_LE(e, 8.0);
  std::mt19937 rng(2);
  std::shuffle(g.pixels.begin(), g.pixels.end(), rng);
  EXPECT_DOUBLE_EQ(entropy(g), e);
}

TEST(Histogram, SumsToPixelCount) {
  const auto g = random_gray(13, 17, 3);
  const auto h = histogram(g);
  EXPECT_EQ(std::accumulate(h.begin(), h.end(), std::uint64_t{0}), 13u * 17u);
  for (std::size_t v = 0; v < 256; ++v) {
    EXPECT_EQ(h[v], static_cast<std::uint64_t>(std::count(g.pixels.begin(), g.pixels.end(), v)));
  }
}

TEST(Correlation, RowReplicatedIsOneVertically) {
  // Every row is a copy of the first one.
  GrayFrame g(10, 12);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 12; ++x) g.at(y, x) = static_cast<std::uint8_t>(x * 20);
  }
  EXPECT_NEAR(correlation_coefficient(g, Direction::kVertical), 1.0, 1e-9);
  EXPECT_LT(correlation_coefficient(g, Direction::kHorizontal), 1.0);
}

TEST(Correlation, CheckerboardIsMinusOne) {
  GrayFrame g(8, 8);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) g.at(y, x) = (x + y) % 2 ? 255 : 0;
  }
  EXPECT_NEAR(correlation_coefficient(g, Direction::kHorizontal), -1.0, 1e-9);
  EXPECT_NEAR(correlation_coefficient(g, Direction::kVertical), -1.0, 1e-9);
  EXPECT_NEAR(correlation_coefficient(g, Direction::kDiagonal), 1.0, 1e-12);
}

TEST(Correlation, InUnitIntervalAndNearOracle) {
  for (std::uint32_t s = 0; s < 5; ++s) {
    const auto g = smooth_gray(64, 80, s);
    for (auto [dir, dy, dx] : {std::tuple{Direction::kHorizontal, 0, 1},
                               std::tuple{Direction::kVertical, 1, 0},
                               std::tuple{Direction::kDiagonal, 1, 1}}) {
      const double r = correlation_coefficient(g, dir);
      EXPECT_GE(r, -1.0);
      EXPECT_LE(r, 1.0);
      EXPECT_NEAR(r, pearson_oracle(g, dy, dx), 0.01) << to_string(dir);
    }
  }
}

TEST(Correlation, RandomFrameIsNearZero) {
  const auto g = random_gray(200, 200, 9);
  for (auto d : {Direction::kHorizontal, Direction::kVertical, Direction::kDiagonal}) {
    EXPECT_LT(std::abs(correlation_coefficient(g, d)), 0.02);
  }
}

TEST(Correlation, AffineInvariant) {
  const auto g = smooth_gray(40, 50, 4);
  GrayFrame h = g;
  for (auto& v : h.pixels) v = static_cast<std::uint8_t>(v / 2 + 30);
  // Halving truncates, so allow for the rounding.
  for (auto d : {Direction::kHorizontal, Direction::kVertical, Direction::kDiagonal}) {
    EXPECT_NEAR(correlation_coefficient(g, d), correlation_coefficient(h, d), 0.01);
  }
}

TEST(Correlation, DegenerateInputs) {
  EXPECT_THROW(correlation_coefficient(GrayFrame(5, 5, 7), Direction::kHorizontal), DegenerateFrame);
  EXPECT_THROW(correlation_coefficient(GrayFrame(1, 5, 7), Direction::kVertical), FrameTooSmall);
  const auto r = analyze_frame(GrayFrame(6, 6, 9), 10, 0);
  EXPECT_TRUE(std::isnan(r.horizontal));
  const nlohmann::json j = r;
  EXPECT_TRUE(j.at("horizontal").is_null());
  EXPECT_EQ(j.at("entropy"), 0.0);
}

TEST(PairSampling, DeterministicAndAdjacent) {
  const auto g = random_gray(30, 40, 5);
  for (auto d : {Direction::kHorizontal, Direction::kVertical, Direction::kDiagonal}) {
    const auto a = sample_adjacent_pairs(g, 600, d, 7);
    const auto b = sample_adjacent_pairs(g, 600, d, 7);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.size(), 600u);
    EXPECT_NE(a, sample_adjacent_pairs(g, 600, d, 8));
  }
  EXPECT_THROW(sample_adjacent_pairs(g, 0, Direction::kHorizontal, 0), InvalidCount);
  EXPECT_THROW(sample_adjacent_pairs(GrayFrame(1, 1), 5, Direction::kHorizontal, 0), FrameTooSmall);
}

TEST(PairSampling, PairsAreRealNeighbours) {
  // Encode position in the pixel so every sampled pair can be checked.
  GrayFrame g(16, 16);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) g.at(y, x) = static_cast<std::uint8_t>(y * 16 + x);
  }
  for (const auto& [a, b] : sample_adjacent_pairs(g, 300, Direction::kHorizontal, 1)) {
    EXPECT_EQ(b, a + 1);
  }
  for (const auto& [a, b] : sample_adjacent_pairs(g, 300, Direction::kVertical, 1)) {
    EXPECT_EQ(b, a + 16);
  }
  for (const auto& [a, b] : sample_adjacent_pairs(g, 300, Direction::kDiagonal, 1)) {
    EXPECT_EQ(b, a + 17);
  }
}

TEST(PairSampling, SampledCorrelationConverges) {
  const auto g = smooth_gray(96, 128, 6);
  for (auto d : {Direction::kHorizontal, Direction::kVertical}) {
    const auto pairs = sample_adjacent_pairs(g, 100000, d, 3);
    EXPECT_NEAR(pair_correlation(pairs), correlation_coefficient(g, d), 0.01) << to_string(d);
  }
}

TEST(Plots, ScatterAndHistogram) {
  const std::vector<PixelPair> pairs{{0, 0}, {255, 255}, {10, 200}};
  const auto s = scatter_plot(pairs);
  EXPECT_EQ(s.height, 256);
  EXPECT_EQ(s.width, 256);
  EXPECT_EQ(s.at(255, 0), 0);
  EXPECT_EQ(s.at(0, 255), 0);
  EXPECT_EQ(s.at(55, 10), 0);
  EXPECT_EQ(std::count(s.pixels.begin(), s.pixels.end(), 0), 3);

  Histogram h{};
  h[3] = 10;
  h[7] = 5;
  const auto p = histogram_plot(h, 101);
  EXPECT_EQ(p.height, 101);
  int bar3 = 0, bar7 = 0;
  for (int y = 0; y < 101; ++y) {
    bar3 += p.at(y, 3) == 0;
    bar7 += p.at(y, 7) == 0;
  }
  EXPECT_EQ(bar3, 100);
  EXPECT_EQ(bar7, 50);
}

TEST(NoiseMask, Distributions) {
  const int n = 100000;
  const auto g = generate_noise_mask({NoiseKind::kGaussian, 0.0, 1}, n);
  const double mean = std::accumulate(g.begin(), g.end(), 0.0) / n;
  double var = 0;
  for (double v : g) var += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var / n, 1.0, 0.03);

  const auto u = generate_noise_mask({NoiseKind::kUniform, 0.0, 1}, n);
  EXPECT_GE(*std::min_element(u.begin(), u.end()), -1.0);
  EXPECT_LE(*std::max_element(u.begin(), u.end()), 1.0);
  EXPECT_NEAR(std::accumulate(u.begin(), u.end(), 0.0) / n, 0.0, 0.02);

  const auto b = generate_noise_mask({NoiseKind::kBernoulli, 0.5, 1}, n);
  for (double v : b) ASSERT_TRUE(v == 0.0 || v == 1.0);
  EXPECT_NEAR(std::accumulate(b.begin(), b.end(), 0.0) / n, 0.5, 0.01);

  for (double sigma : {0.05, 0.25, 3.0}) {
    const auto t = generate_noise_mask({NoiseKind::kTruncatedNormal, sigma, 1}, n);
    EXPECT_GE(*std::min_element(t.begin(), t.end()), -1.0);
    EXPECT_LE(*std::max_element(t.begin(), t.end()), 1.0);
  }
  const auto t = generate_noise_mask({NoiseKind::kTruncatedNormal, 0.05, 1}, n);
  double tv = 0;
  for (double v : t) tv += v * v;
  EXPECT_NEAR(std::sqrt(tv / n), 0.05, 0.002);

  const auto c = generate_noise_mask({NoiseKind::kConstant, 0.25, 1}, 10);
  for (double v : c) EXPECT_EQ(v, 0.25);
}

TEST(NoiseMask, SeedDeterminismAndErrors) {
  const NoiseSpec s{NoiseKind::kGaussian, 0.0, 5};
  EXPECT_EQ(generate_noise_mask(s, 64), generate_noise_mask(s, 64));
  EXPECT_NE(generate_noise_mask(s, 64), generate_noise_mask({NoiseKind::kGaussian, 0.0, 6}, 64));
  EXPECT_THROW(generate_noise_mask({NoiseKind::kTruncatedNormal, 0.0, 0}, 8), ConfigError);
  EXPECT_THROW(generate_noise_mask(s, 0), InvalidCount);
  EXPECT_EQ(noise_kind_from_string("truncn"), NoiseKind::kTruncatedNormal);
  EXPECT_THROW(noise_kind_from_string("pink"), ConfigError);
  EXPECT_EQ((NoiseSpec{NoiseKind::kTruncatedNormal, 0.1, 0}.label()), "TruncN(0.10)");
}

TEST(NoiseMask, DefaultSuite) {
  const auto suite = default_attack_suite(3);
  ASSERT_EQ(suite.size(), 8u);
  EXPECT_EQ(suite[0].kind, NoiseKind::kGaussian);
  EXPECT_EQ(suite[1].kind, NoiseKind::kUniform);
  EXPECT_EQ(suite[2].kind, NoiseKind::kBernoulli);
  for (int i = 3; i < 8; ++i) {
    EXPECT_EQ(suite[i].kind, NoiseKind::kTruncatedNormal);
    EXPECT_NEAR(suite[i].param, 0.05 * (i - 2), 1e-12);
  }
}

TEST(Attack, KeylessIsRawEmbeddingDecode) {
  const auto m = build_model(tiny_model_config(), 1);
  EXPECT_EQ(decrypt_without_key(m, 0.3).pixels,
            forward(positional_encode(0.3, m.config.pe), m).pixels);
}

TEST(Attack, AllOnesMaskEqualsKeyless) {
  const auto m = build_model(tiny_model_config(), 2);
  const auto video = synthetic_video(3, 16, 16);
  const auto a = noise_attack(m, video, {NoiseKind::kConstant, 1.0, 0});
  const auto b = keyless_quality(m, video);
  EXPECT_DOUBLE_EQ(a.psnr, b.psnr);
  EXPECT_DOUBLE_EQ(a.ssim, b.ssim);
}

TEST(Attack, RealKeyBeatsNoiseAfterTraining) {
  const auto video = synthetic_video(2, 16, 16);
  const auto cfg = tiny_model_config();
  const auto key = init_key_module(cfg.pe, 0);
  TrainConfig tc;
  tc.epochs = 300;
  tc.lr = 5e-4;
  const auto m = train_video(video, key, build_model(cfg, 0), tc).model;
  const double keyed = keyed_quality(m, key, video).psnr;
  for (const auto& spec : default_attack_suite(0)) {
    EXPECT_GT(keyed, noise_attack(m, video, spec).psnr) << spec.label();
  }
}

TEST(Attack, ResolutionMismatch) {
  const auto m = build_model(tiny_model_config(), 3);
  EXPECT_THROW(keyless_quality(m, synthetic_video(2, 32, 32)), ConfigMismatch);
  EXPECT_THROW(noise_attack(m, FrameSequence{}, {}), ConfigMismatch);
}

TEST(Parallel, EveryIndexOnceAndErrorsPropagate) {
  for (int threads : {1, 3, 8}) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(50, [&](int i) { ++hits[i]; }, threads);
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
    EXPECT_THROW(parallel_for(10, [](int i) { if (i == 4) throw InvalidCount("x"); }, threads),
                 InvalidCount);
  }
}

TEST(Parallel, AttackMatchesSerial) {
  const auto m = build_model(tiny_model_config(), 4);
  const auto video = synthetic_video(5, 16, 16);
  const NoiseSpec spec{NoiseKind::kGaussian, 0.0, 9};
  std::vector<Frame> serial;
  for (int i = 0; i < video.count(); ++i) {
    NoiseSpec s = spec;
    s.seed = spec.seed ^ static_cast<std::uint64_t>(i);
    const auto mask = generate_noise_mask(s, m.config.pe.embedding_length());
    auto e = positional_encode(video.timestamps[i], m.config.pe);
    for (std::size_t k = 0; k < e.size(); ++k) e[k] *= mask[k];
    serial.push_back(forward(e, m));
  }
  EXPECT_DOUBLE_EQ(noise_attack(m, video, spec).psnr, mean_quality(serial, video.frames).psnr);
}
