#pragma once

// NVCP model container:
//   "NVCP" | u16 version | config JSON (u32 length + bytes)
//   | u32 tensor count | directory entries | blobs | u32 CRC32
// Directory entry: name, rank, dims, dtype, [bit, mu_min, mu_max], offset,
// byte length. Offsets are relative to the start of the blob section.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "nervcp/binary_io.hpp"
#include "nervcp/nerv_model.hpp"
#include "nervcp/quantization.hpp"

namespace nervcp {

inline constexpr std::string_view kModelMagic = "NVCP";
inline constexpr std::uint16_t kModelFormatVersion = 1;

enum class TensorDType : std::uint8_t { kF32 = 0, kQU8 = 1, kQU16 = 2, kQU32 = 3 };

inline TensorDType storage_for_bit(int bit) {
  if (bit <= 8) return TensorDType::kQU8;
  if (bit <= 16) return TensorDType::kQU16;
  return TensorDType::kQU32;
}

inline std::size_t dtype_bytes(TensorDType d) {
  switch (d) {
    case TensorDType::kF32: return 4;
    case TensorDType::kQU8: return 1;
    case TensorDType::kQU16: return 2;
    case TensorDType::kQU32: return 4;
  }
  throw FormatError("unknown dtype");
}

/// Decoded container contents; exactly one of the tensor lists is filled.
struct ModelArchive {
  ModelConfig config;
  std::vector<Tensor> dense;
  std::vector<QuantizedTensor> quantized;

  bool is_quantized() const { return !quantized.empty(); }
};

namespace detail {

struct DirEntry {
  std::string name;
  std::vector<int> shape;
  TensorDType dtype = TensorDType::kF32;
  int bit = 0;
  double mu_min = 0.0, mu_max = 0.0;
  std::uint64_t offset = 0, length = 0;
};

inline std::vector<std::uint8_t> write_archive(const ModelConfig& cfg,
                                               const std::vector<DirEntry>& dir,
                                               const std::vector<std::uint8_t>& blobs,
                                               std::uint16_t version) {
  binary::Writer w;
  w.magic(kModelMagic);
  w.u16(version);
  w.str(nlohmann::json(cfg).dump());
  w.u32(static_cast<std::uint32_t>(dir.size()));
  for (const auto& e : dir) {
    w.str(e.name);
    w.u8(static_cast<std::uint8_t>(e.shape.size()));
    for (int d : e.shape) w.u32(static_cast<std::uint32_t>(d));
    w.u8(static_cast<std::uint8_t>(e.dtype));
    if (e.dtype != TensorDType::kF32) {
      w.u8(static_cast<std::uint8_t>(e.bit));
      w.f64(e.mu_min);
      w.f64(e.mu_max);
    }
    w.u64(e.offset);
    w.u64(e.length);
  }
  w.bytes(blobs.data(), blobs.size());
  return std::move(w).finish();
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const NervModel& model,
                                                 std::uint16_t version = kModelFormatVersion) {
  std::vector<detail::DirEntry> dir;
  std::vector<std::uint8_t> blobs;
  for (const auto& t : model.params.tensors) {
    detail::DirEntry e{t.name, t.shape, TensorDType::kF32, 0, 0.0, 0.0, blobs.size(),
                       t.data.size() * sizeof(float)};
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
    blobs.insert(blobs.end(), p, p + e.length);
    dir.push_back(std::move(e));
  }
  return detail::write_archive(model.config, dir, blobs, version);
}

inline std::vector<std::uint8_t> serialize_model(const QuantizedModel& model,
                                                 std::uint16_t version = kModelFormatVersion) {
  std::vector<detail::DirEntry> dir;
  std::vector<std::uint8_t> blobs;
  for (const auto& qt : model.tensors) {
    const auto dtype = storage_for_bit(qt.bit);
    const std::size_t width = dtype_bytes(dtype);
    detail::DirEntry e{qt.name, qt.shape, dtype, qt.bit, qt.mu_min, qt.mu_max, blobs.size(),
                       qt.q.size() * width};
    for (std::uint32_t v : qt.q) {
      for (std::size_t b = 0; b < width; ++b) blobs.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
    }
    dir.push_back(std::move(e));
  }
  return detail::write_archive(model.config, dir, blobs, version);
}

inline ModelArchive deserialize_model_archive(std::span<const std::uint8_t> bytes) {
  std::uint16_t version = 0;
  binary::Reader r(binary::open_container(bytes, kModelMagic, kModelFormatVersion, version));
  ModelArchive ar;
  try {
    ar.config = nlohmann::json::parse(r.str()).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model config: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  std::vector<detail::DirEntry> dir(count);
  for (auto& e : dir) {
    e.name = r.str();
    e.shape.resize(r.u8());
    for (int& d : e.shape) d = static_cast<int>(r.u32());
    const auto dt = r.u8();
    if (dt > 3) throw FormatError("unknown dtype " + std::to_string(dt));
    e.dtype = static_cast<TensorDType>(dt);
    if (e.dtype != TensorDType::kF32) {
      e.bit = r.u8();
      e.mu_min = r.f64();
      e.mu_max = r.f64();
    }
    e.offset = r.u64();
    e.length = r.u64();
  }
  std::vector<std::uint8_t> blobs(r.remaining());
  r.bytes(blobs.data(), blobs.size());

  for (const auto& e : dir) {
    const std::size_t n = Tensor::element_count(e.shape);
    const std::size_t width = dtype_bytes(e.dtype);
    if (e.length != n * width || e.offset + e.length > blobs.size()) {
      throw FormatError("tensor " + e.name + " blob out of range");
    }
    const std::uint8_t* src = blobs.data() + e.offset;
    if (e.dtype == TensorDType::kF32) {
      Tensor t(e.name, e.shape);
      std::memcpy(t.data.data(), src, e.length);
      ar.dense.push_back(std::move(t));
    } else {
      if (e.bit < 1 || e.bit > 16) throw FormatError("quantized bit out of range");
      QuantizedTensor qt{e.name, e.shape, std::vector<std::uint32_t>(n), e.mu_min, e.mu_max, e.bit};
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t v = 0;
        for (std::size_t b = 0; b < width; ++b) v |= std::uint32_t{src[i * width + b]} << (8 * b);
        qt.q[i] = v;
      }
      ar.quantized.push_back(std::move(qt));
    }
  }
  if (!ar.dense.empty() && !ar.quantized.empty()) {
    throw FormatError("mixed dense and quantized tensors are not supported");
  }
  return ar;
}

inline ModelArchive read_model_archive(const std::filesystem::path& path) {
  return deserialize_model_archive(binary::read_file(path));
}

inline void save_model(const NervModel& model, const std::filesystem::path& path) {
  binary::write_file(path, serialize_model(model));
}

inline void save_model(const QuantizedModel& model, const std::filesystem::path& path) {
  binary::write_file(path, serialize_model(model));
}

/// Loads a model file; quantized payloads are dequantized.
inline NervModel load_model(const std::filesystem::path& path) {
  auto ar = read_model_archive(path);
  if (ar.is_quantized()) return dequantize_model({ar.config, std::move(ar.quantized)});
  NervModel m{ar.config, {std::move(ar.dense)}};
  check_model_layout(m);
  return m;
}

inline QuantizedModel load_quantized_model(const std::filesystem::path& path) {
  auto ar = read_model_archive(path);
  if (!ar.is_quantized()) throw FormatError(path.string() + " holds a dense model");
  return {ar.config, std::move(ar.quantized)};
}

}  // namespace nervcp
