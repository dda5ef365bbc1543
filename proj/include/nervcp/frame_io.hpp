#pragma once

// Frame ingestion and output: PNG/JPEG directories and raw Y4M files.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "nervcp/errors.hpp"

namespace nervcp {

/// RGB frame, channel-last (H, W, 3), values in [0, 1].
struct Frame {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Frame() = default;
  Frame(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  float& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::size_t size() const { return pixels.size(); }
};

/// 8-bit single-channel frame used by the statistics module.
struct GrayFrame {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  GrayFrame() = default;
  GrayFrame(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t at(int y, int x) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
};

struct FrameSequence {
  std::vector<Frame> frames;
  std::vector<double> timestamps;

  int count() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames.front().height; }
  int width() const { return frames.empty() ? 0 : frames.front().width; }
};

/// Timestamp grid i/T for i = 1..T; the last entry is exactly 1.0.
inline std::vector<double> normalize_timestamps(int count) {
  if (count <= 0) {
    throw InvalidCount("frame count must be positive, got " +
                       std::to_string(count));
  }
  std::vector<double> ts(count);
  for (int i = 0; i < count; ++i) {
    ts[i] = static_cast<double>(i + 1) / count;
  }
  ts.back() = 1.0;
  return ts;
}

/// BT.601 luma, rounded to the nearest 8-bit level.
inline GrayFrame to_grayscale(const Frame& frame) {
  GrayFrame gray(frame.height, frame.width);
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const double luma = 0.299 * frame.at(y, x, 0) + 0.587 * frame.at(y, x, 1) +
                          0.114 * frame.at(y, x, 2);
      const double v = std::round(255.0 * luma);
      gray.at(y, x) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
  return gray;
}

namespace detail {

inline Frame frame_from_bgr(const cv::Mat& bgr8) {
  Frame f(bgr8.rows, bgr8.cols);
  for (int y = 0; y < bgr8.rows; ++y) {
    const auto* row = bgr8.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr8.cols; ++x) {
      for (int c = 0; c < 3; ++c) {
        f.at(y, x, c) = row[x][2 - c] / 255.0f;
      }
    }
  }
  return f;
}

inline cv::Mat to_bgr8(const Frame& f) {
  cv::Mat out(f.height, f.width, CV_8UC3);
  for (int y = 0; y < f.height; ++y) {
    auto* row = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < f.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(f.at(y, x, c), 0.0f, 1.0f);
        row[x][2 - c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  return out;
}

inline Frame resize_bilinear(const Frame& f, int h, int w) {
  if (f.height == h && f.width == w) return f;
  cv::Mat src(f.height, f.width, CV_32FC3, const_cast<float*>(f.pixels.data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
  Frame out(h, w);
  std::copy(dst.ptr<float>(), dst.ptr<float>() + out.size(), out.pixels.begin());
  for (auto& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

inline bool has_image_extension(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

inline std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Reads 8-bit 4:2:0 or 4:4:4 Y4M. Limited-range BT.601 YCbCr.
inline std::vector<Frame> read_y4m(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput("cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  if (header.rfind("YUV4MPEG2", 0) != 0) {
    throw DecodeError(path.string() + " is not a YUV4MPEG2 stream");
  }
  int width = 0, height = 0;
  std::string chroma = "420";
  std::istringstream tokens(header.substr(9));
  std::string tok;
  while (tokens >> tok) {
    switch (tok[0]) {
      case 'W': width = std::stoi(tok.substr(1)); break;
      case 'H': height = std::stoi(tok.substr(1)); break;
      case 'C': chroma = tok.substr(1); break;
      default: break;
    }
  }
  if (width <= 0 || height <= 0) throw DecodeError("Y4M header lacks W/H");
  bool is444 = chroma.rfind("444", 0) == 0;
  bool is420 = chroma.rfind("420", 0) == 0;
  if (!is444 && !is420) throw DecodeError("unsupported Y4M chroma " + chroma);
  const int cw = is444 ? width : (width + 1) / 2;
  const int ch = is444 ? height : (height + 1) / 2;

  std::vector<Frame> frames;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("FRAME", 0) != 0) throw DecodeError("bad Y4M frame marker");
    std::vector<std::uint8_t> yp(static_cast<std::size_t>(width) * height);
    std::vector<std::uint8_t> up(static_cast<std::size_t>(cw) * ch);
    std::vector<std::uint8_t> vp(up.size());
    in.read(reinterpret_cast<char*>(yp.data()), static_cast<std::streamsize>(yp.size()));
    in.read(reinterpret_cast<char*>(up.data()), static_cast<std::streamsize>(up.size()));
    in.read(reinterpret_cast<char*>(vp.data()), static_cast<std::streamsize>(vp.size()));
    if (!in) throw DecodeError("truncated Y4M frame " + std::to_string(frames.size()));
    Frame f(height, width);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const int cx = is444 ? x : x / 2;
        const int cy = is444 ? y : y / 2;
        const double Y = 1.164383 * (yp[static_cast<std::size_t>(y) * width + x] - 16);
        const double U = up[static_cast<std::size_t>(cy) * cw + cx] - 128.0;
        const double V = vp[static_cast<std::size_t>(cy) * cw + cx] - 128.0;
        f.at(y, x, 0) = clamp_u8(Y + 1.596027 * V) / 255.0f;
        f.at(y, x, 1) = clamp_u8(Y - 0.391762 * U - 0.812968 * V) / 255.0f;
        f.at(y, x, 2) = clamp_u8(Y + 2.017232 * U) / 255.0f;
      }
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace detail

/// Loads a lexicographically ordered PNG/JPEG directory or a single Y4M
/// file. Frames are resized bilinearly when a target (H, W) is given.
inline FrameSequence load_frames(
    const std::filesystem::path& source,
    std::optional<std::pair<int, int>> target_resolution = std::nullopt) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::exists(source, ec)) {
    throw MissingInput("path does not exist: " + source.string());
  }

  std::vector<Frame> raw;
  if (fs::is_directory(source, ec)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(source, ec)) {
      if (entry.is_regular_file() && detail::has_image_extension(entry.path())) {
        files.push_back(entry.path());
      }
    }
    if (files.empty()) {
      throw MissingInput("no PNG/JPEG frames in " + source.string());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      cv::Mat img = cv::imread(file.string(), cv::IMREAD_COLOR);
      if (img.empty()) throw DecodeError("cannot decode " + file.string());
      raw.push_back(detail::frame_from_bgr(img));
    }
  } else if (source.extension() == ".y4m") {
    raw = detail::read_y4m(source);
    if (raw.empty()) throw MissingInput("Y4M file has no frames: " + source.string());
  } else {
    throw DecodeError("unsupported input (expected frame directory or .y4m): " +
                      source.string());
  }

  FrameSequence seq;
  for (auto& f : raw) {
    if (target_resolution) {
      seq.frames.push_back(
          detail::resize_bilinear(f, target_resolution->first, target_resolution->second));
    } else {
      if (!seq.frames.empty() &&
          (f.height != seq.height() || f.width != seq.width())) {
        throw ShapeMismatch("frames differ in size and no target resolution was given");
      }
      seq.frames.push_back(std::move(f));
    }
  }
  seq.timestamps = normalize_timestamps(seq.count());
  return seq;
}

inline std::string frame_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%05d.png", index);
  return buf;
}

inline void save_frame(const Frame& frame, const std::filesystem::path& path) {
  if (!cv::imwrite(path.string(), detail::to_bgr8(frame))) {
    throw IoError("cannot write " + path.string());
  }
}

/// Writes frame_00001.png, frame_00002.png, ... into `dir`.
inline void save_frames(const std::vector<Frame>& frames,
                        const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    save_frame(frames[i], dir / frame_filename(static_cast<int>(i) + 1));
  }
}

inline void save_gray(const GrayFrame& gray, const std::filesystem::path& path) {
  cv::Mat m(gray.height, gray.width, CV_8UC1,
            const_cast<std::uint8_t*>(gray.pixels.data()));
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write " + path.string());
}

}  // namespace nervcp
