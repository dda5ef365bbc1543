#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "nervcp/nerv_model.hpp"
#include "support/synthetic_video.hpp"

using namespace nervcp;

namespace {

// Counts parameters by walking the layer list of the architecture
// description, independent of allocate_parameters.
std::size_t shape_walker(int emb, int hidden, int c1, int h0, int w0, int c2, int floor_ch,
                         const std::vector<int>& factors) {
  std::size_t n = 0;
  n += static_cast<std::size_t>(emb) * hidden + hidden;
  const std::size_t stem = static_cast<std::size_t>(c1) * h0 * w0;
  n += hidden * stem + stem;
  int cin = c1;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    int cout = static_cast<int>(c2 / std::pow(2, i));
    if (i > 0) cout = std::max(cout, floor_ch);
    const std::size_t conv_out = static_cast<std::size_t>(cout) * factors[i] * factors[i];
    n += 9 * static_cast<std::size_t>(cin) * conv_out + conv_out;
    cin = cout;
  }
  n += static_cast<std::size_t>(cin) * 3 + 3;
  return n;
}

ModelConfig paper_720p(int c1) {
  ModelConfig c;
  c.c1 = c1;
  c.c2 = 26;
  c.target_height = 720;
  c.target_width = 1280;
  return c;
}

ModelConfig desk16() {
  ModelConfig c;
  c.c1 = 8;
  c.c2 = 32;
  c.mlp_hidden = 16;
  c.upscale_factors = {2, 2};
  c.base_height = 4;
  c.base_width = 4;
  c.min_channels = 8;
  c.pe.frequencies = 4;
  return c;
}

std::vector<float> random_embedding(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> e(n);
  for (auto& v : e) v = u(rng);
  return e;
}

}  // namespace

TEST(ModelConfig, PaperScaleParameterCount) {
  const auto m = build_model(paper_720p(26), 0);
  EXPECT_EQ(m.config.output_height(), 720);
  EXPECT_EQ(m.config.output_width(), 1280);
  const double p = static_cast<double>(m.parameter_count());
  EXPECT_NEAR(p, 3.2e6, 0.05 * 3.2e6);
  EXPECT_EQ(m.parameter_count(), shape_walker(160, 512, 26, 9, 16, 26, 96, {5, 2, 2, 2, 2}));
}

TEST(ModelConfig, DeskParameterCountMatchesShapeWalker) {
  const auto cfg = desk16();
  const auto m = build_model(cfg, 0);
  EXPECT_EQ(cfg.output_height(), 16);
  EXPECT_EQ(cfg.output_width(), 16);
  EXPECT_EQ(m.parameter_count(), shape_walker(8, 16, 8, 4, 4, 32, 8, {2, 2}));
  const auto d = nervcp::testing::desk_model_config();
  EXPECT_EQ(build_model(d, 0).parameter_count(), shape_walker(80, 96, 16, 9, 16, 64, 16, {2, 2, 2}));
  EXPECT_LE(build_model(d, 0).parameter_count(), 400000u);
}

TEST(ModelConfig, ChannelScheduleFloors) {
  ModelConfig c;
  c.c2 = 384;
  c.min_channels = 96;
  EXPECT_EQ(c.block_out_channels(0), 384);
  EXPECT_EQ(c.block_out_channels(1), 192);
  EXPECT_EQ(c.block_out_channels(2), 96);
  EXPECT_EQ(c.block_out_channels(3), 96);
  EXPECT_EQ(c.block_in_channels(0), c.c1);
  EXPECT_EQ(c.block_in_channels(2), 192);
}

TEST(ModelConfig, ParameterCountMonotoneInChannels) {
  auto base = desk16();
  std::size_t prev = 0;
  for (int c1 = 1; c1 <= 12; ++c1) {
    base.c1 = c1;
    const auto n = allocate_parameters(base).count();
    EXPECT_GE(n, prev);
    prev = n;
  }
  base = desk16();
  prev = 0;
  for (int c2 = 1; c2 <= 64; c2 += 3) {
    base.c2 = c2;
    const auto n = allocate_parameters(base).count();
    EXPECT_GE(n, prev);
    prev = n;
  }
}

TEST(ModelConfig, Validation) {
  auto c = desk16();
  c.target_height = 17;
  c.target_width = 16;
  EXPECT_THROW(build_model(c, 0), ConfigError);
  c = desk16();
  c.min_channels = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = desk16();
  c.upscale_factors = {};
  EXPECT_THROW(c.validate(), ConfigError);
  c = desk16();
  c.upscale_factors = {2, 0};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(paper_720p(26).validate());
}

TEST(ModelConfig, JsonRoundTripAndUnknownKeys) {
  auto c = desk16();
  c.output_activation = OutputActivation::kClamp;
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<ModelConfig>(), c);
  auto bad = j;
  bad["colour"] = 3;
  EXPECT_THROW(bad.get<ModelConfig>(), ConfigError);
  auto bad_pe = j;
  bad_pe["pe"]["phase"] = 1;
  EXPECT_THROW(bad_pe.get<ModelConfig>(), ConfigError);
  EXPECT_EQ(nlohmann::json::parse(R"({"pe": {"embedding_length": 120}})").get<ModelConfig>().pe.frequencies,
            60);
}

TEST(Forward, OutputShapeAndRange) {
  const auto m = build_model(desk16(), 1);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto e = random_embedding(8, s);
    auto big = e;
    for (auto& v : big) v *= 50.0f;
    for (const auto& in : {e, big}) {
      const auto f = forward(std::span<const float>(in), m);
      EXPECT_EQ(f.height, 16);
      EXPECT_EQ(f.width, 16);
      for (float v : f.pixels) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
      }
    }
  }
}

TEST(Forward, ZeroParametersGiveHalfGray) {
  auto m = build_model(desk16(), 1);
  m.params.fill(0.0f);
  const auto f = forward(std::span<const float>(random_embedding(8, 3)), m);
  for (float v : f.pixels) EXPECT_EQ(v, 0.5f);
}

TEST(Forward, DeterministicAcrossBuilds) {
  const auto e = random_embedding(8, 4);
  const auto a = forward(std::span<const float>(e), build_model(desk16(), 42));
  const auto b = forward(std::span<const float>(e), build_model(desk16(), 42));
  EXPECT_EQ(a.pixels, b.pixels);
  const auto c = forward(std::span<const float>(e), build_model(desk16(), 43));
  EXPECT_NE(a.pixels, c.pixels);
}

TEST(Forward, RejectsWrongEmbeddingLength) {
  const auto m = build_model(desk16(), 0);
  const std::vector<float> e(7);
  EXPECT_THROW(forward(std::span<const float>(e), m), ShapeError);
}

TEST(Forward, ClampHead) {
  auto c = desk16();
  c.output_activation = OutputActivation::kClamp;
  auto m = build_model(c, 0);
  m.params.fill(0.0f);
  m.params.get("head.bias").data = {-2.0f, 0.25f, 3.0f};
  const auto f = forward(std::span<const float>(random_embedding(8, 0)), m);
  EXPECT_EQ(f.at(3, 3, 0), 0.0f);
  EXPECT_EQ(f.at(3, 3, 1), 0.25f);
  EXPECT_EQ(f.at(3, 3, 2), 1.0f);
}

TEST(Backward, MatchesFiniteDifferences) {
  auto c = desk16();
  c.c1 = 2;
  c.c2 = 8;
  c.min_channels = 2;
  c.mlp_hidden = 6;
  c.base_height = 2;
  c.base_width = 3;
  const auto m = build_model(c, 5);
  const auto e = random_embedding(8, 6);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> g(static_cast<std::size_t>(c.output_height()) * c.output_width() * 3);
  for (auto& v : g) v = u(rng);
  auto loss = [&](const NervModel& mm, const std::vector<float>& in) {
    const auto f = forward(std::span<const float>(in), mm);
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += static_cast<double>(f.pixels[i]) * g[i];
    return s;
  };

  const auto tr = forward_trace(e, m);
  auto grads = m.params.zeros_like();
  std::vector<float> d_in(e.size());
  backward(m, tr, g, grads, d_in);

  const float eps = 5e-3f;
  std::uniform_int_distribution<int> pick(0, 1 << 20);
  for (std::size_t k = 0; k < m.params.tensors.size(); ++k) {
    const auto& t = m.params.tensors[k];
    for (int probe = 0; probe < 6; ++probe) {
      const std::size_t i = pick(rng) % t.size();
      auto p = m, n = m;
      p.params.tensors[k].data[i] += eps;
      n.params.tensors[k].data[i] -= eps;
      const double fd = (loss(p, e) - loss(n, e)) / (2.0 * eps);
      EXPECT_NEAR(grads.tensors[k].data[i], fd, 2e-2 * std::max(1.0, std::abs(fd)))
          << t.name << "[" << i << "]";
    }
  }
  for (std::size_t i = 0; i < e.size(); ++i) {
    auto p = e, n = e;
    p[i] += eps;
    n[i] -= eps;
    const double fd = (loss(m, p) - loss(m, n)) / (2.0 * eps);
    EXPECT_NEAR(d_in[i], fd, 2e-2 * std::max(1.0, std::abs(fd))) << "input[" << i << "]";
  }
}

TEST(Layout, CheckModelLayout) {
  auto m = build_model(desk16(), 0);
  EXPECT_NO_THROW(check_model_layout(m));
  m.params.tensors.pop_back();
  EXPECT_THROW(check_model_layout(m), ShapeMismatch);
}
