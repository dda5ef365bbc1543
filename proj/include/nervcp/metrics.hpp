#pragma once

// SSIM (with an analytic gradient), MS-SSIM, PSNR and the composite
// L1 + SSIM training loss. The kernels are templated on the scalar type so
// gradient checks can run in double while training runs in float.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "nervcp/errors.hpp"
#include "nervcp/frame_io.hpp"

namespace nervcp {

/// Channel-last image view.
template <typename Real>
struct ImageView {
  std::span<const Real> data;
  int height = 0;
  int width = 0;
  int channels = 3;
};

inline ImageView<float> view(const Frame& f) { return {f.pixels, f.height, f.width, 3}; }

/// Frame pixels widened to double; evaluation metrics run in double.
inline std::vector<double> widen(const Frame& f) { return {f.pixels.begin(), f.pixels.end()}; }

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

namespace detail {

/// Window actually used: the configured size, shrunk to the largest odd size
/// that fits frames smaller than the window.
inline int effective_window(int height, int width, int window) {
  int k = std::min({window, height, width});
  if (k % 2 == 0) --k;
  return std::max(k, 1);
}

template <typename Real>
std::vector<Real> gaussian_kernel(int size, double sigma) {
  std::vector<Real> g(size);
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double v = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    g[i] = static_cast<Real>(v);
    sum += v;
  }
  for (auto& v : g) v = static_cast<Real>(v / sum);
  return g;
}

/// Valid-mode separable filtering of an H x W plane.
template <typename Real>
std::vector<Real> filter_valid(const std::vector<Real>& in, int h, int w,
                               const std::vector<Real>& g) {
  const int k = static_cast<int>(g.size());
  const int ho = h - k + 1, wo = w - k + 1;
  std::vector<Real> tmp(static_cast<std::size_t>(h) * wo);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < wo; ++x) {
      Real s = 0;
      for (int i = 0; i < k; ++i) s += g[i] * in[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * wo + x] = s;
    }
  }
  std::vector<Real> out(static_cast<std::size_t>(ho) * wo);
  for (int y = 0; y < ho; ++y) {
    for (int x = 0; x < wo; ++x) {
      Real s = 0;
      for (int i = 0; i < k; ++i) s += g[i] * tmp[static_cast<std::size_t>(y + i) * wo + x];
      out[static_cast<std::size_t>(y) * wo + x] = s;
    }
  }
  return out;
}

/// Adjoint of filter_valid: scatters an (H-k+1) x (W-k+1) map back to H x W.
template <typename Real>
std::vector<Real> filter_valid_adjoint(const std::vector<Real>& in, int h, int w,
                                       const std::vector<Real>& g) {
  const int k = static_cast<int>(g.size());
  const int ho = h - k + 1, wo = w - k + 1;
  std::vector<Real> tmp(static_cast<std::size_t>(h) * wo, Real(0));
  for (int y = 0; y < ho; ++y) {
    for (int x = 0; x < wo; ++x) {
      const Real v = in[static_cast<std::size_t>(y) * wo + x];
      for (int i = 0; i < k; ++i) tmp[static_cast<std::size_t>(y + i) * wo + x] += g[i] * v;
    }
  }
  std::vector<Real> out(static_cast<std::size_t>(h) * w, Real(0));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < wo; ++x) {
      const Real v = tmp[static_cast<std::size_t>(y) * wo + x];
      for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(y) * w + x + i] += g[i] * v;
    }
  }
  return out;
}

template <typename Real>
std::vector<Real> plane(const ImageView<Real>& im, int c) {
  std::vector<Real> p(static_cast<std::size_t>(im.height) * im.width);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = im.data[i * im.channels + c];
  return p;
}

template <typename Real>
void check_same_shape(const ImageView<Real>& a, const ImageView<Real>& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels ||
      a.data.size() != b.data.size()) {
    throw ShapeMismatch("images differ in shape");
  }
  if (a.height < 1 || a.width < 1) throw ShapeMismatch("empty image");
}

struct SsimStats {
  double ssim = 0.0;
  double cs = 0.0;  // contrast-structure term, used by MS-SSIM
};

/// Mean SSIM and contrast-structure over all channels. When `grad_x` is
/// non-null it receives dSSIM/dx.
template <typename Real>
SsimStats ssim_impl(const ImageView<Real>& x, const ImageView<Real>& y, const SsimParams& p,
                    std::vector<Real>* grad_x) {
  check_same_shape(x, y);
  const int h = x.height, w = x.width;
  const int k = effective_window(h, w, p.window);
  const auto g = gaussian_kernel<Real>(k, p.sigma);
  const Real C1 = static_cast<Real>((p.k1 * p.data_range) * (p.k1 * p.data_range));
  const Real C2 = static_cast<Real>((p.k2 * p.data_range) * (p.k2 * p.data_range));
  const int ho = h - k + 1, wo = w - k + 1;
  const std::size_t n_map = static_cast<std::size_t>(ho) * wo;
  const double n_total = static_cast<double>(n_map) * x.channels;

  if (grad_x) grad_x->assign(x.data.size(), Real(0));
  double ssim_sum = 0.0, cs_sum = 0.0;
  std::vector<Real> xx(static_cast<std::size_t>(h) * w), yy(xx.size()), xy(xx.size());

  for (int c = 0; c < x.channels; ++c) {
    const auto px = plane(x, c);
    const auto py = plane(y, c);
    for (std::size_t i = 0; i < px.size(); ++i) {
      xx[i] = px[i] * px[i];
      yy[i] = py[i] * py[i];
      xy[i] = px[i] * py[i];
    }
    const auto mx = filter_valid(px, h, w, g);
    const auto my = filter_valid(py, h, w, g);
    const auto exx = filter_valid(xx, h, w, g);
    const auto eyy = filter_valid(yy, h, w, g);
    const auto exy = filter_valid(xy, h, w, g);

    std::vector<Real> d_mu, d_exx, d_exy;
    if (grad_x) {
      d_mu.resize(n_map);
      d_exx.resize(n_map);
      d_exy.resize(n_map);
    }
    for (std::size_t i = 0; i < n_map; ++i) {
      const Real sxx = exx[i] - mx[i] * mx[i];
      const Real syy = eyy[i] - my[i] * my[i];
      const Real sxy = exy[i] - mx[i] * my[i];
      const Real a1 = 2 * mx[i] * my[i] + C1;
      const Real a2 = 2 * sxy + C2;
      const Real b1 = mx[i] * mx[i] + my[i] * my[i] + C1;
      const Real b2 = sxx + syy + C2;
      const Real s = (a1 * a2) / (b1 * b2);
      ssim_sum += s;
      cs_sum += a2 / b2;
      if (grad_x) {
        d_mu[i] = s * (2 * my[i] / a1 - 2 * my[i] / a2 - 2 * mx[i] / b1 + 2 * mx[i] / b2);
        d_exx[i] = -s / b2;
        d_exy[i] = 2 * s / a2;
      }
    }
    if (grad_x) {
      const auto ga = filter_valid_adjoint(d_mu, h, w, g);
      const auto gb = filter_valid_adjoint(d_exx, h, w, g);
      const auto gc = filter_valid_adjoint(d_exy, h, w, g);
      const Real inv_n = static_cast<Real>(1.0 / n_total);
      for (std::size_t i = 0; i < px.size(); ++i) {
        (*grad_x)[i * x.channels + c] = (ga[i] + 2 * px[i] * gb[i] + py[i] * gc[i]) * inv_n;
      }
    }
  }
  return {ssim_sum / n_total, cs_sum / n_total};
}

template <typename Real>
std::vector<Real> downsample2(const ImageView<Real>& im, int& h, int& w) {
  h = im.height / 2;
  w = im.width / 2;
  std::vector<Real> out(static_cast<std::size_t>(h) * w * im.channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < im.channels; ++c) {
        auto at = [&](int yy, int xx) {
          return im.data[(static_cast<std::size_t>(yy) * im.width + xx) * im.channels + c];
        };
        out[(static_cast<std::size_t>(y) * w + x) * im.channels + c] =
            (at(2 * y, 2 * x) + at(2 * y + 1, 2 * x) + at(2 * y, 2 * x + 1) +
             at(2 * y + 1, 2 * x + 1)) /
            Real(4);
      }
    }
  }
  return out;
}

}  // namespace detail

/// Single-scale SSIM (Gaussian window, valid region, averaged over channels).
template <typename Real>
double ssim(const ImageView<Real>& x, const ImageView<Real>& y, const SsimParams& p = {},
            std::vector<Real>* grad_x = nullptr) {
  return detail::ssim_impl(x, y, p, grad_x).ssim;
}

inline double ssim(const Frame& x, const Frame& y) {
  const auto a = widen(x), b = widen(y);
  return ssim(ImageView<double>{a, x.height, x.width, 3}, ImageView<double>{b, y.height, y.width, 3});
}

inline constexpr std::array<double, 5> kMsSsimWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
inline constexpr int kMsSsimMinSide = 176;

/// Five-scale MS-SSIM; frames with min(H, W) < 176 fall back to SSIM.
/// Negative per-scale terms are clipped to zero, so the result is in [0, 1].
template <typename Real>
double ms_ssim(const ImageView<Real>& x, const ImageView<Real>& y, const SsimParams& p = {}) {
  detail::check_same_shape(x, y);
  if (std::min(x.height, x.width) < kMsSsimMinSide) {
    return std::clamp(ssim(x, y, p), 0.0, 1.0);
  }
  std::vector<Real> bx, by;
  ImageView<Real> cx = x, cy = y;
  double result = 1.0;
  for (std::size_t s = 0; s < kMsSsimWeights.size(); ++s) {
    const auto st = detail::ssim_impl<Real>(cx, cy, p, nullptr);
    const double term = s + 1 == kMsSsimWeights.size() ? st.ssim : st.cs;
    result *= std::pow(std::max(term, 0.0), kMsSsimWeights[s]);
    if (s + 1 == kMsSsimWeights.size()) break;
    int h = 0, w = 0;
    bx = detail::downsample2(cx, h, w);
    by = detail::downsample2(cy, h, w);
    cx = {bx, h, w, x.channels};
    cy = {by, h, w, y.channels};
  }
  return std::min(result, 1.0);
}

inline double ms_ssim(const Frame& x, const Frame& y) {
  const auto a = widen(x), b = widen(y);
  return ms_ssim(ImageView<double>{a, x.height, x.width, 3},
                 ImageView<double>{b, y.height, y.width, 3});
}

inline constexpr double kPsnrCap = 99.0;

inline double mse(const Frame& a, const Frame& b) {
  detail::check_same_shape(view(a), view(b));
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    s += d * d;
  }
  return s / static_cast<double>(a.pixels.size());
}

/// 10 log10(1 / MSE) for [0, 1] data, capped at 99 dB.
inline double psnr(const Frame& a, const Frame& b) {
  const double m = mse(a, b);
  if (m < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

struct QualityReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
};

inline QualityReport quality_metrics(const Frame& pred, const Frame& gt) {
  return {psnr(pred, gt), ssim(pred, gt), ms_ssim(pred, gt)};
}

/// Per-frame metrics averaged over the sequence.
inline QualityReport mean_quality(std::span<const Frame> preds, std::span<const Frame> gts) {
  if (preds.size() != gts.size() || preds.empty()) {
    throw ShapeMismatch("prediction and ground-truth sequences differ in length");
  }
  QualityReport r;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto q = quality_metrics(preds[i], gts[i]);
    r.psnr += q.psnr;
    r.ssim += q.ssim;
    r.ms_ssim += q.ms_ssim;
  }
  const double n = static_cast<double>(preds.size());
  return {r.psnr / n, r.ssim / n, r.ms_ssim / n};
}

/// alpha * mean|pred - gt| + (1 - alpha) * (1 - SSIM(pred, gt)). When
/// `grad` is non-null it receives dL/dpred.
template <typename Real>
double composite_loss(const ImageView<Real>& pred, const ImageView<Real>& gt, double alpha,
                      std::vector<Real>* grad = nullptr, const SsimParams& p = {}) {
  detail::check_same_shape(pred, gt);
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
  const std::size_t n = pred.data.size();
  double l1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    l1 += std::abs(static_cast<double>(pred.data[i]) - static_cast<double>(gt.data[i]));
  }
  l1 /= static_cast<double>(n);
  const double s = detail::ssim_impl(pred, gt, p, grad).ssim;
  if (grad) {
    const Real a = static_cast<Real>(alpha / static_cast<double>(n));
    const Real b = static_cast<Real>(1.0 - alpha);
    for (std::size_t i = 0; i < n; ++i) {
      const Real d = pred.data[i] - gt.data[i];
      const Real sign = d > 0 ? Real(1) : (d < 0 ? Real(-1) : Real(0));
      (*grad)[i] = a * sign - b * (*grad)[i];
    }
  }
  return alpha * l1 + (1.0 - alpha) * (1.0 - s);
}

inline double composite_loss(const Frame& pred, const Frame& gt, double alpha) {
  const auto a = widen(pred), b = widen(gt);
  return composite_loss(ImageView<double>{a, pred.height, pred.width, 3},
                        ImageView<double>{b, gt.height, gt.width, 3}, alpha);
}

}  // namespace nervcp
