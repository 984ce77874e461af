#include "hsq/pyramid.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

namespace hsq {
namespace {

TEST(Pyramid, TokenCountsFor224Input) {
  const auto counts = level_token_counts(224, 224);
  EXPECT_EQ(counts[0], 3136u);
  EXPECT_EQ(counts[1], 784u);
  EXPECT_EQ(counts[2], 196u);
  EXPECT_EQ(counts[3], 49u);
}

TEST(Pyramid, TokenCountsFollowStrideGrids) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 32 * (1 + rng.next_u64() % 12);
    const std::size_t w = 32 * (1 + rng.next_u64() % 12);
    const auto counts = level_token_counts(h, w);
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
      const std::size_t s = kPyramidStrides[i];
      EXPECT_EQ(counts[i], (h / s) * (w / s));
    }
    // Each level holds a quarter of the tokens of the one below it.
    for (std::size_t i = 1; i < kPyramidLevels; ++i) {
      EXPECT_EQ(counts[i - 1], 4 * counts[i]);
    }
  }
}

TEST(Pyramid, TokenCountsRejectBadSizes) {
  EXPECT_THROW(level_token_counts(0, 224), ConfigError);
  EXPECT_THROW(level_token_counts(224, 0), ConfigError);
  EXPECT_THROW(level_token_counts(225, 224), ConfigError);
  EXPECT_THROW(level_token_counts(224, 100), ConfigError);
}

TEST(Pyramid, SynthIsDeterministicPerSeed) {
  const auto a = synth_pyramid<double>(64, 32, kDefaultChannels, 7);
  const auto b = synth_pyramid<double>(64, 32, kDefaultChannels, 7);
  const auto c = synth_pyramid<double>(64, 32, kDefaultChannels, 8);
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    hsqtest::expect_matrix_eq(a.levels[i].tokens, b.levels[i].tokens);
  }
  EXPECT_NE(a.levels[0].tokens(0, 0), c.levels[0].tokens(0, 0));
}

TEST(Pyramid, SynthValuesAreFloatRepresentable) {
  const auto p = synth_pyramid<double>(32, 32, {4, 4, 4, 4}, 3);
  for (const auto& lv : p.levels) {
    for (std::size_t i = 0; i < lv.tokens.rows(); ++i) {
      for (std::size_t j = 0; j < lv.tokens.cols(); ++j) {
        const double v = lv.tokens(i, j);
        EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
      }
    }
  }
}

TEST(Pyramid, SynthValidatesArguments) {
  EXPECT_THROW(synth_pyramid<double>(33, 32, {4, 4, 4, 4}, 0), ConfigError);
  EXPECT_THROW(synth_pyramid<double>(32, 32, {4, 0, 4, 4}, 0), ConfigError);
}

std::string serialize(const FeaturePyramid<double>& p) {
  std::ostringstream os(std::ios::binary);
  write_pyramid(os, p);
  return os.str();
}

FeaturePyramid<double> deserialize(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_pyramid<double>(is, "test");
}

TEST(PyramidIo, RoundTripIsByteIdentical) {
  const auto p = synth_pyramid<double>(64, 64, {6, 12, 24, 48}, 21);
  const std::string first = serialize(p);
  const auto back = deserialize(first);
  EXPECT_EQ(back.height, p.height);
  EXPECT_EQ(back.width, p.width);
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    EXPECT_EQ(back.levels[i].stride, p.levels[i].stride);
    EXPECT_EQ(back.levels[i].channels, p.levels[i].channels);
    hsqtest::expect_matrix_eq(back.levels[i].tokens, p.levels[i].tokens);
  }
  EXPECT_EQ(serialize(back), first);
}

TEST(PyramidIo, FileRoundTrip) {
  const std::string path = testing::TempDir() + "roundtrip.hsqf";
  const auto p = synth_pyramid<double>(32, 64, {3, 5, 7, 9}, 5);
  write_pyramid_file(path, p);
  const auto back = read_pyramid_file<double>(path);
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    hsqtest::expect_matrix_eq(back.levels[i].tokens, p.levels[i].tokens);
  }
}

TEST(PyramidIo, MissingFileReportsFileAccess) {
  try {
    read_pyramid_file<double>("/nonexistent/dir/x.hsqf");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_EQ(e.kind(), IoErrorKind::file_access);
  }
}

IoErrorKind read_kind(const std::string& bytes) {
  try {
    deserialize(bytes);
  } catch (const IoError& e) {
    return e.kind();
  }
  throw std::runtime_error("read unexpectedly succeeded");
}

TEST(PyramidIo, CorruptionsMapToDesignatedErrors) {
  const std::string good = serialize(synth_pyramid<double>(32, 32, {2, 2, 2, 2}, 1));

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(read_kind(bad_magic), IoErrorKind::bad_magic);

  std::string bad_version = good;
  bad_version[4] = 9;
  EXPECT_EQ(read_kind(bad_version), IoErrorKind::bad_version);

  // Height byte set to a value not divisible by the coarsest stride.
  std::string bad_height = good;
  bad_height[8] = 33;
  EXPECT_EQ(read_kind(bad_height), IoErrorKind::geometry);

  // Level count field lives after version, height, width.
  std::string bad_levels = good;
  bad_levels[16] = 3;
  EXPECT_EQ(read_kind(bad_levels), IoErrorKind::geometry);

  // First level stride field follows the fixed 20-byte header.
  std::string bad_stride = good;
  bad_stride[20] = 5;
  EXPECT_EQ(read_kind(bad_stride), IoErrorKind::geometry);

  std::string truncated = good.substr(0, good.size() - 3);
  EXPECT_EQ(read_kind(truncated), IoErrorKind::truncated);

  std::string short_header = good.substr(0, 10);
  EXPECT_EQ(read_kind(short_header), IoErrorKind::truncated);

  std::string trailing = good;
  trailing.push_back('\0');
  EXPECT_EQ(read_kind(trailing), IoErrorKind::malformed);
}

TEST(PyramidIo, WriteValidatesTheStack) {
  auto p = synth_pyramid<double>(32, 32, {2, 2, 2, 2}, 1);
  p.levels[2].stride = 15;
  std::ostringstream os(std::ios::binary);
  EXPECT_THROW(write_pyramid(os, p), ContractViolation);

  auto q = synth_pyramid<double>(32, 32, {2, 2, 2, 2}, 1);
  q.levels[0].tokens = Matrix<double>(3, 2);
  std::ostringstream os2(std::ios::binary);
  EXPECT_THROW(write_pyramid(os2, q), ContractViolation);
}

}  // namespace
}  // namespace hsq
