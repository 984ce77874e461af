#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "hsq/binio.hpp"
#include "hsq/errors.hpp"
#include "hsq/matrix.hpp"
#include "hsq/rng.hpp"

namespace hsq {

// Backbone feature maps arrive at four spatial resolutions. Level i holds one
// token per output cell of a stride kPyramidStrides[i] grid, so an input of
// height H and width W contributes (H/s)*(W/s) tokens at stride s.
inline constexpr std::size_t kPyramidLevels = 4;
inline constexpr std::array<std::size_t, kPyramidLevels> kPyramidStrides = {4, 8,
                                                                            16, 32};
inline constexpr std::array<std::size_t, kPyramidLevels> kDefaultChannels = {
    96, 192, 384, 768};

// Token counts per level for an H x W input. Both sides must be positive and
// divisible by the coarsest stride so every level tiles the image exactly.
inline std::array<std::size_t, kPyramidLevels> level_token_counts(std::size_t h,
                                                                  std::size_t w) {
  if (h == 0 || w == 0) {
    throw ConfigError("input size must be positive, got " + std::to_string(h) +
                      "x" + std::to_string(w));
  }
  const std::size_t coarsest = kPyramidStrides.back();
  if (h % coarsest != 0 || w % coarsest != 0) {
    throw ConfigError("input size must be divisible by " +
                      std::to_string(coarsest) + ", got " + std::to_string(h) +
                      "x" + std::to_string(w));
  }
  std::array<std::size_t, kPyramidLevels> counts{};
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    const std::size_t s = kPyramidStrides[i];
    counts[i] = (h / s) * (w / s);
  }
  return counts;
}

template <typename T>
struct PyramidLevel {
  std::size_t stride = 0;
  std::size_t channels = 0;
  Matrix<T> tokens;  // token_count x channels
};

// One multi-scale feature stack as produced by a backbone for a single image.
template <typename T>
struct FeaturePyramid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::array<PyramidLevel<T>, kPyramidLevels> levels;
};

template <typename T>
void validate_pyramid(const FeaturePyramid<T>& p) {
  const auto counts = level_token_counts(p.height, p.width);
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    const auto& lv = p.levels[i];
    if (lv.stride != kPyramidStrides[i]) {
      throw ContractViolation("level " + std::to_string(i) + " stride " +
                              std::to_string(lv.stride) + ", expected " +
                              std::to_string(kPyramidStrides[i]));
    }
    if (lv.channels == 0 || lv.tokens.cols() != lv.channels) {
      throw ContractViolation("level " + std::to_string(i) +
                              " channel count does not match its token width");
    }
    if (lv.tokens.rows() != counts[i]) {
      throw ContractViolation("level " + std::to_string(i) + " has " +
                              std::to_string(lv.tokens.rows()) +
                              " tokens, expected " + std::to_string(counts[i]));
    }
  }
}

// Deterministic synthetic pyramid. One sequential generator fills the levels
// in order, and every value is rounded through float so the result survives a
// float32 round trip bit-exactly.
template <typename T>
FeaturePyramid<T> synth_pyramid(std::size_t h, std::size_t w,
                                const std::array<std::size_t, kPyramidLevels>& channels,
                                std::uint64_t seed) {
  const auto counts = level_token_counts(h, w);
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    if (channels[i] == 0) {
      throw ConfigError("channel count must be positive at every level");
    }
  }
  FeaturePyramid<T> p;
  p.height = h;
  p.width = w;
  Rng rng(seed);
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    auto& lv = p.levels[i];
    lv.stride = kPyramidStrides[i];
    lv.channels = channels[i];
    lv.tokens = Matrix<T>(counts[i], channels[i]);
    for (std::size_t r = 0; r < lv.tokens.rows(); ++r) {
      T* row = lv.tokens.row(r);
      for (std::size_t c = 0; c < lv.tokens.cols(); ++c) {
        row[c] = static_cast<T>(static_cast<float>(rng.next_normal()));
      }
    }
  }
  return p;
}

// Feature stack container format. Layout, all little-endian:
//   magic "HSQF", version u32 = 1, height u32, width u32, level_count u32 = 4,
//   then per level: stride u32, channels u32, rows u64, cols u64, and
//   rows*cols float32 values in row-major order. No trailing bytes.
inline constexpr char kPyramidMagic[4] = {'H', 'S', 'Q', 'F'};
inline constexpr std::uint32_t kPyramidVersion = 1;

template <typename T>
void write_pyramid(std::ostream& os, const FeaturePyramid<T>& p) {
  validate_pyramid(p);
  detail::write_bytes(os, kPyramidMagic, 4);
  detail::write_pod(os, kPyramidVersion);
  detail::write_pod(os, static_cast<std::uint32_t>(p.height));
  detail::write_pod(os, static_cast<std::uint32_t>(p.width));
  detail::write_pod(os, static_cast<std::uint32_t>(kPyramidLevels));
  for (const auto& lv : p.levels) {
    detail::write_pod(os, static_cast<std::uint32_t>(lv.stride));
    detail::write_pod(os, static_cast<std::uint32_t>(lv.channels));
    detail::write_pod(os, static_cast<std::uint64_t>(lv.tokens.rows()));
    detail::write_pod(os, static_cast<std::uint64_t>(lv.tokens.cols()));
    detail::write_f32_payload(os, lv.tokens);
  }
}

template <typename T>
void write_pyramid_file(const std::string& path, const FeaturePyramid<T>& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw IoError(IoErrorKind::file_access, "cannot open for writing: " + path);
  }
  write_pyramid(os, p);
  if (!os) {
    throw IoError(IoErrorKind::file_access, "write failed: " + path);
  }
}

template <typename T>
FeaturePyramid<T> read_pyramid(std::istream& is, const std::string& ctx) {
  char magic[4];
  is.read(magic, 4);
  if (!is || is.gcount() != 4 || std::string(magic, 4) != std::string(kPyramidMagic, 4)) {
    throw IoError(IoErrorKind::bad_magic, ctx + ": not a feature stack file");
  }
  const auto version = detail::read_pod<std::uint32_t>(is, ctx);
  if (version != kPyramidVersion) {
    throw IoError(IoErrorKind::bad_version,
                  ctx + ": unsupported version " + std::to_string(version));
  }
  const auto h = detail::read_pod<std::uint32_t>(is, ctx);
  const auto w = detail::read_pod<std::uint32_t>(is, ctx);
  const auto level_count = detail::read_pod<std::uint32_t>(is, ctx);
  if (level_count != kPyramidLevels) {
    throw IoError(IoErrorKind::geometry,
                  ctx + ": expected " + std::to_string(kPyramidLevels) +
                      " levels, got " + std::to_string(level_count));
  }
  std::array<std::size_t, kPyramidLevels> counts;
  try {
    counts = level_token_counts(h, w);
  } catch (const ConfigError& e) {
    throw IoError(IoErrorKind::geometry, ctx + ": " + e.what());
  }
  FeaturePyramid<T> p;
  p.height = h;
  p.width = w;
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    auto& lv = p.levels[i];
    lv.stride = detail::read_pod<std::uint32_t>(is, ctx);
    lv.channels = detail::read_pod<std::uint32_t>(is, ctx);
    const auto rows = detail::read_pod<std::uint64_t>(is, ctx);
    const auto cols = detail::read_pod<std::uint64_t>(is, ctx);
    if (lv.stride != kPyramidStrides[i]) {
      throw IoError(IoErrorKind::geometry,
                    ctx + ": level " + std::to_string(i) + " stride " +
                        std::to_string(lv.stride) + ", expected " +
                        std::to_string(kPyramidStrides[i]));
    }
    if (lv.channels == 0 || cols != lv.channels) {
      throw IoError(IoErrorKind::geometry,
                    ctx + ": level " + std::to_string(i) +
                        " column count does not match its channel field");
    }
    if (rows != counts[i]) {
      throw IoError(IoErrorKind::geometry,
                    ctx + ": level " + std::to_string(i) + " has " +
                        std::to_string(rows) + " tokens, expected " +
                        std::to_string(counts[i]) + " for " + std::to_string(h) +
                        "x" + std::to_string(w));
    }
    lv.tokens = Matrix<T>(rows, cols);
    detail::read_f32_payload(is, lv.tokens, ctx);
  }
  detail::expect_end_of_file(is, ctx);
  return p;
}

template <typename T>
FeaturePyramid<T> read_pyramid_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw IoError(IoErrorKind::file_access, "cannot open for reading: " + path);
  }
  return read_pyramid<T>(is, path);
}

}  // namespace hsq
