#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "nervcp/nerv_model.hpp"
#include "nervcp/nn.hpp"

using namespace nervcp;
using nervcp::nn::FeatureMap;

namespace {

FeatureMap random_map(int h, int w, int c, std::mt19937_64& rng) {
  FeatureMap m(h, w, c);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& v : m.data) v = u(rng);
  return m;
}

Tensor random_tensor(const std::string& name, std::vector<int> shape, std::mt19937_64& rng) {
  Tensor t(name, std::move(shape));
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Literal evaluation of the shuffle index map, one output element at a time.
FeatureMap shuffle_oracle(const FeatureMap& in, int r) {
  const int C = in.channels / (r * r);
  FeatureMap out(in.height * r, in.width * r, C);
  for (int x = 0; x < out.height; ++x) {
    for (int y = 0; y < out.width; ++y) {
      for (int c = 0; c < C; ++c) {
        out.at(x, y, c) = in.at(x / r, y / r, C * r * (y % r) + C * (x % r) + c);
      }
    }
  }
  return out;
}

// Direct 3x3 same-padded convolution.
FeatureMap conv_oracle(const FeatureMap& x, const Tensor& w, const Tensor& b) {
  const int cin = w.shape[2], cout = w.shape[3];
  FeatureMap y(x.height, x.width, cout);
  for (int i = 0; i < x.height; ++i) {
    for (int j = 0; j < x.width; ++j) {
      for (int o = 0; o < cout; ++o) {
        double s = b.data[o];
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int yy = i + ky - 1, xx = j + kx - 1;
            if (yy < 0 || yy >= x.height || xx < 0 || xx >= x.width) continue;
            for (int c = 0; c < cin; ++c) {
              s += x.at(yy, xx, c) * w.data[((ky * 3 + kx) * cin + c) * cout + o];
            }
          }
        }
        y.at(i, j, o) = static_cast<float>(s);
      }
    }
  }
  return y;
}

}  // namespace

TEST(Gelu, ErfForm) {
  EXPECT_EQ(nn::gelu(0.0f), 0.0f);
  for (float x : {-3.0f, -1.0f, -0.2f, 0.5f, 2.0f}) {
    const double ref = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    EXPECT_NEAR(nn::gelu(x), ref, 1e-6);
    const float h = 1e-3f;
    EXPECT_NEAR(nn::gelu_grad(x), (nn::gelu(x + h) - nn::gelu(x - h)) / (2 * h), 1e-3);
  }
}

TEST(PixelShuffle, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(1, 6), rr(1, 4), cc(1, 3);
  for (int n = 0; n < 200; ++n) {
    const int r = rr(rng);
    const auto in = random_map(dim(rng), dim(rng), cc(rng) * r * r, rng);
    const auto got = nn::pixel_shuffle(in, r);
    const auto want = shuffle_oracle(in, r);
    ASSERT_EQ(got.height, want.height);
    ASSERT_EQ(got.width, want.width);
    ASSERT_EQ(got.channels, want.channels);
    ASSERT_EQ(got.data, want.data);
  }
}

TEST(PixelShuffle, FourChannelsToTwoByTwo) {
  FeatureMap in(1, 1, 4);
  in.data = {1, 2, 3, 4};  // a b c d
  const auto out = nn::pixel_shuffle(in, 2);
  // out(x,y) = in(0,0, 2*(y%2) + (x%2)) with x the row.
  EXPECT_EQ(out.at(0, 0, 0), 1);
  EXPECT_EQ(out.at(1, 0, 0), 2);
  EXPECT_EQ(out.at(0, 1, 0), 3);
  EXPECT_EQ(out.at(1, 1, 0), 4);
}

TEST(PixelShuffle, IdentityAtScaleOne) {
  std::mt19937_64 rng(2);
  const auto in = random_map(3, 5, 7, rng);
  EXPECT_EQ(nn::pixel_shuffle(in, 1).data, in.data);
}

TEST(PixelShuffle, BijectionAndInverse) {
  std::mt19937_64 rng(3);
  for (int r : {2, 3, 5}) {
    const auto in = random_map(4, 3, 2 * r * r, rng);
    const auto out = nn::pixel_shuffle(in, r);
    EXPECT_EQ(out.height, 4 * r);
    EXPECT_EQ(out.width, 3 * r);
    EXPECT_EQ(out.channels, 2);
    auto a = in.data, b = out.data;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    EXPECT_EQ(nn::pixel_unshuffle(out, r).data, in.data);
  }
}

TEST(PixelShuffle, UnshuffleIsAdjoint) {
  std::mt19937_64 rng(4);
  const auto x = random_map(3, 4, 8, rng);
  const auto y = random_map(6, 8, 2, rng);
  double lhs = 0.0, rhs = 0.0;
  const auto sx = nn::pixel_shuffle(x, 2);
  const auto uy = nn::pixel_unshuffle(y, 2);
  for (std::size_t i = 0; i < y.data.size(); ++i) lhs += sx.data[i] * y.data[i];
  for (std::size_t i = 0; i < x.data.size(); ++i) rhs += x.data[i] * uy.data[i];
  EXPECT_NEAR(lhs, rhs, 1e-4);
}

TEST(PixelShuffle, RejectsIndivisibleChannels) {
  FeatureMap in(2, 2, 6);
  EXPECT_THROW(nn::pixel_shuffle(in, 2), ShapeError);
  EXPECT_THROW(nn::pixel_shuffle(in, 0), ShapeError);
}

TEST(Conv3x3, MatchesDirectConvolution) {
  std::mt19937_64 rng(5);
  for (auto [h, w, cin, cout] : std::vector<std::array<int, 4>>{{1, 1, 1, 1}, {3, 4, 2, 5}, {6, 2, 3, 4}}) {
    const auto x = random_map(h, w, cin, rng);
    const auto wt = random_tensor("w", {3, 3, cin, cout}, rng);
    const auto b = random_tensor("b", {cout}, rng);
    nn::RowMatrix cols;
    const auto got = nn::conv3x3_forward(x, wt, b, cols);
    const auto want = conv_oracle(x, wt, b);
    for (std::size_t i = 0; i < got.data.size(); ++i) EXPECT_NEAR(got.data[i], want.data[i], 1e-5);
  }
}

TEST(Conv3x3, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const auto x = random_map(3, 4, 2, rng);
  const auto w = random_tensor("w", {3, 3, 2, 3}, rng);
  const auto b = random_tensor("b", {3}, rng);
  const auto g = random_map(3, 4, 3, rng);  // upstream gradient; L = <g, conv(x)>
  auto loss = [&](const FeatureMap& xx, const Tensor& ww, const Tensor& bb) {
    const auto y = conv_oracle(xx, ww, bb);
    double s = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * g.data[i];
    return s;
  };
  nn::RowMatrix cols;
  nn::conv3x3_forward(x, w, b, cols);
  Tensor dw("dw", w.shape), db("db", b.shape);
  FeatureMap dx;
  nn::conv3x3_backward(cols, w, g, &dw, &db, &dx);

  const float eps = 1e-2f;
  for (std::size_t i = 0; i < w.data.size(); ++i) {
    auto p = w, m = w;
    p.data[i] += eps;
    m.data[i] -= eps;
    EXPECT_NEAR(dw.data[i], (loss(x, p, b) - loss(x, m, b)) / (2 * eps), 1e-3);
  }
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    auto p = x, m = x;
    p.data[i] += eps;
    m.data[i] -= eps;
    EXPECT_NEAR(dx.data[i], (loss(p, w, b) - loss(m, w, b)) / (2 * eps), 1e-3);
  }
  for (std::size_t i = 0; i < b.data.size(); ++i) {
    auto p = b, m = b;
    p.data[i] += eps;
    m.data[i] -= eps;
    EXPECT_NEAR(db.data[i], (loss(x, w, p) - loss(x, w, m)) / (2 * eps), 1e-3);
  }
}

TEST(Linear, ForwardBackward) {
  std::mt19937_64 rng(7);
  const auto w = random_tensor("w", {3, 2}, rng);
  const auto b = random_tensor("b", {2}, rng);
  const std::vector<float> x{0.5f, -1.0f, 2.0f};
  std::vector<float> y(2);
  nn::linear_forward(x, w, b, y);
  for (int o = 0; o < 2; ++o) {
    double s = b.data[o];
    for (int i = 0; i < 3; ++i) s += x[i] * w.data[i * 2 + o];
    EXPECT_NEAR(y[o], s, 1e-6);
  }
  const std::vector<float> dy{1.0f, -2.0f};
  Tensor dw("dw", {3, 2}), db("db", {2});
  std::vector<float> dx(3);
  nn::linear_backward(x, w, dy, &dw, &db, dx);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(dx[i], w.data[i * 2] * 1.0f - 2.0f * w.data[i * 2 + 1], 1e-6);
    EXPECT_NEAR(dw.data[i * 2], x[i], 1e-6);
    EXPECT_NEAR(dw.data[i * 2 + 1], -2.0f * x[i], 1e-6);
  }
  EXPECT_EQ(db.data, dy);
  std::vector<float> wrong(4);
  EXPECT_THROW(nn::linear_forward(wrong, w, b, y), ShapeError);
}

TEST(NervBlock, IdentityKernelGivesGelu) {
  std::mt19937_64 rng(8);
  const int c = 3;
  const auto x = random_map(4, 5, c, rng);
  Tensor w("w", {3, 3, c, c}), b("b", {c});
  for (int i = 0; i < c; ++i) w.data[((1 * 3 + 1) * c + i) * c + i] = 1.0f;
  const auto y = nerv_block_forward(x, w, b, 1);
  for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_NEAR(y.data[i], nn::gelu(x.data[i]), 1e-6);
}

TEST(NervBlock, ZeroInputZeroBias) {
  std::mt19937_64 rng(9);
  const FeatureMap x(3, 3, 2);
  const auto w = random_tensor("w", {3, 3, 2, 8}, rng);
  const Tensor b("b", {8});
  const auto y = nerv_block_forward(x, w, b, 2);
  EXPECT_EQ(y.height, 6);
  EXPECT_EQ(y.channels, 2);
  for (float v : y.data) EXPECT_EQ(v, 0.0f);
}

TEST(NervBlock, FirstPaperBlockShape) {
  std::mt19937_64 rng(10);
  const int c2 = 4;
  const auto x = random_map(9, 16, 3, rng);
  const auto w = random_tensor("w", {3, 3, 3, c2 * 25}, rng);
  const Tensor b("b", {c2 * 25});
  const auto y = nerv_block_forward(x, w, b, 5);
  EXPECT_EQ(y.height, 45);
  EXPECT_EQ(y.width, 80);
  EXPECT_EQ(y.channels, c2);
}
