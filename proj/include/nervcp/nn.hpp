#pragma once

// Layer primitives with hand-written backward passes. Feature maps are
// channel-last (H, W, C) so a 3x3 convolution is one im2col GEMM.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nervcp/errors.hpp"
#include "nervcp/rng.hpp"
#include "nervcp/tensor.hpp"

namespace nervcp::nn {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstRowVectorMap = Eigen::Map<const Eigen::RowVectorXf>;

struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {}

  int pixels() const { return height * width; }
  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  MatrixMap matrix() { return MatrixMap(data.data(), pixels(), channels); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data.data(), pixels(), channels); }
};

// Exact (erf) GELU.
inline float gelu(float x) {
  return 0.5f * x * (1.0f + std::erf(x * static_cast<float>(std::numbers::sqrt2 / 2)));
}

inline float gelu_grad(float x) {
  const float cdf = 0.5f * (1.0f + std::erf(x * static_cast<float>(std::numbers::sqrt2 / 2)));
  const float pdf = std::exp(-0.5f * x * x) * static_cast<float>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

inline float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

inline void gelu_inplace(std::span<float> v) {
  for (float& x : v) x = gelu(x);
}

// dx = dy * gelu'(pre); `pre` holds the activation input.
inline void gelu_backward(std::span<const float> pre, std::span<float> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= gelu_grad(pre[i]);
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline void init_fan_in_uniform(Tensor& t, int fan_in, Rng& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : t.data) v = dist(rng);
}

// ---------------------------------------------------------------- linear

/// y = x W + b with W stored (in, out). Written as row axpys so each output
/// sums in a fixed order whatever the buffer alignment.
inline void linear_forward(std::span<const float> x, const Tensor& w, const Tensor& b,
                           std::span<float> y) {
  const int in = w.shape[0];
  const int out = w.shape[1];
  if (static_cast<int>(x.size()) != in || static_cast<int>(y.size()) != out) {
    throw ShapeError("linear " + w.name + ": expected " + std::to_string(in) + " inputs, got " +
                     std::to_string(x.size()));
  }
  std::copy(b.data.begin(), b.data.end(), y.begin());
  for (int i = 0; i < in; ++i) {
    const float xi = x[i];
    const float* row = w.data.data() + static_cast<std::size_t>(i) * out;
    for (int j = 0; j < out; ++j) y[j] += xi * row[j];
  }
}

/// Accumulates dW, db; writes dx when non-empty.
inline void linear_backward(std::span<const float> x, const Tensor& w, std::span<const float> dy,
                            Tensor* dw, Tensor* db, std::span<float> dx) {
  const int in = w.shape[0];
  const int out = w.shape[1];
  if (dw) {
    for (int i = 0; i < in; ++i) {
      float* row = dw->data.data() + static_cast<std::size_t>(i) * out;
      for (int j = 0; j < out; ++j) row[j] += x[i] * dy[j];
    }
  }
  if (db) {
    for (int j = 0; j < out; ++j) db->data[j] += dy[j];
  }
  if (!dx.empty()) {
    for (int i = 0; i < in; ++i) {
      const float* row = w.data.data() + static_cast<std::size_t>(i) * out;
      float s = 0.0f;
      for (int j = 0; j < out; ++j) s += row[j] * dy[j];
      dx[i] = s;
    }
  }
}

// ---------------------------------------------------------- convolutions

/// Patch matrix of a 3x3 same-padded convolution: (H*W) x (9*C), column
/// index (ky*3 + kx)*C + c.
inline void im2col3x3(const FeatureMap& x, RowMatrix& cols) {
  const int C = x.channels;
  cols.resize(x.pixels(), 9 * C);
  for (int y = 0; y < x.height; ++y) {
    for (int xx = 0; xx < x.width; ++xx) {
      float* row = cols.data() + static_cast<std::size_t>(y * x.width + xx) * 9 * C;
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = xx + kx - 1;
          float* dst = row + (ky * 3 + kx) * C;
          if (sy < 0 || sy >= x.height || sx < 0 || sx >= x.width) {
            std::memset(dst, 0, sizeof(float) * C);
          } else {
            std::memcpy(dst, &x.data[(static_cast<std::size_t>(sy) * x.width + sx) * C],
                        sizeof(float) * C);
          }
        }
      }
    }
  }
}

inline void col2im3x3_add(const RowMatrix& dcols, FeatureMap& dx) {
  const int C = dx.channels;
  for (int y = 0; y < dx.height; ++y) {
    for (int xx = 0; xx < dx.width; ++xx) {
      const float* row = dcols.data() + static_cast<std::size_t>(y * dx.width + xx) * 9 * C;
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= dx.height) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = xx + kx - 1;
          if (sx < 0 || sx >= dx.width) continue;
          const float* src = row + (ky * 3 + kx) * C;
          float* dst = &dx.data[(static_cast<std::size_t>(sy) * dx.width + sx) * C];
          for (int c = 0; c < C; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

// db += sum over pixels of dy. A plain row loop keeps the summation order
// independent of buffer alignment (Eigen's vectorized colwise().sum() is not).
inline void add_column_sums(const FeatureMap& dy, Tensor& db) {
  const int C = dy.channels;
  for (int p = 0; p < dy.pixels(); ++p) {
    const float* row = dy.data.data() + static_cast<std::size_t>(p) * C;
    for (int c = 0; c < C; ++c) db.data[c] += row[c];
  }
}

/// 3x3 stride-1 same-padded convolution. Weight shape (3, 3, Cin, Cout).
/// `cols` receives the patch matrix for the backward pass.
inline FeatureMap conv3x3_forward(const FeatureMap& x, const Tensor& w, const Tensor& b,
                                  RowMatrix& cols) {
  const int cin = w.shape[2];
  const int cout = w.shape[3];
  if (x.channels != cin) {
    throw ShapeError("conv " + w.name + ": input has " + std::to_string(x.channels) +
                     " channels, kernel expects " + std::to_string(cin));
  }
  im2col3x3(x, cols);
  FeatureMap y(x.height, x.width, cout);
  y.matrix().noalias() = cols * ConstMatrixMap(w.data.data(), 9 * cin, cout);
  y.matrix().rowwise() += ConstRowVectorMap(b.data.data(), cout);
  return y;
}

inline void conv3x3_backward(const RowMatrix& cols, const Tensor& w, const FeatureMap& dy,
                             Tensor* dw, Tensor* db, FeatureMap* dx) {
  const int cin = w.shape[2];
  const int cout = w.shape[3];
  auto DY = dy.matrix();
  if (dw) MatrixMap(dw->data.data(), 9 * cin, cout).noalias() += cols.transpose() * DY;
  if (db) add_column_sums(dy, *db);
  if (dx) {
    RowMatrix dcols = DY * ConstMatrixMap(w.data.data(), 9 * cin, cout).transpose();
    *dx = FeatureMap(dy.height, dy.width, cin);
    col2im3x3_add(dcols, *dx);
  }
}

/// 1x1 convolution. Weight shape (Cin, Cout).
inline FeatureMap conv1x1_forward(const FeatureMap& x, const Tensor& w, const Tensor& b) {
  const int cin = w.shape[0];
  const int cout = w.shape[1];
  if (x.channels != cin) throw ShapeError("conv1x1 " + w.name + ": channel mismatch");
  FeatureMap y(x.height, x.width, cout);
  y.matrix().noalias() = x.matrix() * ConstMatrixMap(w.data.data(), cin, cout);
  y.matrix().rowwise() += ConstRowVectorMap(b.data.data(), cout);
  return y;
}

inline void conv1x1_backward(const FeatureMap& x, const Tensor& w, const FeatureMap& dy,
                             Tensor* dw, Tensor* db, FeatureMap* dx) {
  const int cin = w.shape[0];
  const int cout = w.shape[1];
  auto DY = dy.matrix();
  if (dw) MatrixMap(dw->data.data(), cin, cout).noalias() += x.matrix().transpose() * DY;
  if (db) add_column_sums(dy, *db);
  if (dx) {
    *dx = FeatureMap(dy.height, dy.width, cin);
    dx->matrix().noalias() = DY * ConstMatrixMap(w.data.data(), cin, cout).transpose();
  }
}

// ---------------------------------------------------------- pixel shuffle

/// (H, W, C*r*r) -> (rH, rW, C) with
///   out(x, y, c) = in(x / r, y / r, C*r*(y mod r) + C*(x mod r) + c)
/// where x indexes rows and y columns.
inline FeatureMap pixel_shuffle(const FeatureMap& in, int r) {
  if (r <= 0 || in.channels % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(in.channels) +
                     " channels not divisible by r^2 = " + std::to_string(r * r));
  }
  const int C = in.channels / (r * r);
  FeatureMap out(in.height * r, in.width * r, C);
  for (int x = 0; x < out.height; ++x) {
    const int sx = x / r;
    const int a = x % r;
    for (int y = 0; y < out.width; ++y) {
      const int sy = y / r;
      const int base = C * r * (y % r) + C * a;
      const float* src = &in.data[(static_cast<std::size_t>(sx) * in.width + sy) * in.channels + base];
      float* dst = &out.data[(static_cast<std::size_t>(x) * out.width + y) * C];
      std::memcpy(dst, src, sizeof(float) * C);
    }
  }
  return out;
}

/// Exact inverse of pixel_shuffle; also its adjoint, used for gradients.
inline FeatureMap pixel_unshuffle(const FeatureMap& out, int r) {
  if (r <= 0 || out.height % r != 0 || out.width % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial size not divisible by r");
  }
  const int C = out.channels;
  FeatureMap in(out.height / r, out.width / r, C * r * r);
  for (int x = 0; x < out.height; ++x) {
    const int sx = x / r;
    const int a = x % r;
    for (int y = 0; y < out.width; ++y) {
      const int sy = y / r;
      const int base = C * r * (y % r) + C * a;
      float* dst = &in.data[(static_cast<std::size_t>(sx) * in.width + sy) * in.channels + base];
      const float* src = &out.data[(static_cast<std::size_t>(x) * out.width + y) * C];
      std::memcpy(dst, src, sizeof(float) * C);
    }
  }
  return in;
}

}  // namespace nervcp::nn
