#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <unistd.h>
#include <limits>

#include "kitty/tensor_io.h"

namespace kitty {
namespace {

namespace fs = std::filesystem;

class TensorIoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("kitty_io_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path dir_;
};

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected kitty::Error";
  return ErrorCode::kInvalidArgument;
}

TEST_F(TensorIoTest, RoundTripIsBitExact) {
  const HeadMatrix m(3, 4, {0.0f, -1.5f, 2.25f, -0.0f, 1e-30f, 3.4e38f, -7.0f, 0.1f, 5.5f, -2.0f, 1.0f / 3.0f, 8.0f});
  write_tensor(m, path("m.kty"));
  EXPECT_TRUE(bit_equal(read_tensor(path("m.kty")), m));
}

TEST_F(TensorIoTest, EmptyMatrixIsValid) {
  write_tensor(HeadMatrix(0, 0), path("e.kty"));
  const HeadMatrix back = read_tensor(path("e.kty"));
  EXPECT_EQ(back.rows(), 0u);
  EXPECT_EQ(back.cols(), 0u);
  EXPECT_TRUE(back.empty());
}

TEST_F(TensorIoTest, SingleElementFileIs26Bytes) {
  write_tensor(HeadMatrix(1, 1, {7.0f}), path("one.kty"));
  EXPECT_EQ(fs::file_size(path("one.kty")), 26u);
  const auto bytes = read_file(path("one.kty"));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "KTY1");
  EXPECT_EQ(bytes[4], 0x00);
  EXPECT_EQ(bytes[5], 2);
  EXPECT_EQ(bytes[6], 1);   // rows, little-endian
  EXPECT_EQ(bytes[14], 1);  // cols
  // 7.0f = 0x40E00000
  EXPECT_EQ(bytes[22], 0x00);
  EXPECT_EQ(bytes[25], 0x40);
}

TEST_F(TensorIoTest, WritingTwiceGivesIdenticalBytes) {
  const HeadMatrix m = generate_synthetic({16, 8, {2}, 4.0f, 1.0f, 9});
  write_tensor(m, path("a.kty"));
  write_tensor(m, path("b.kty"));
  EXPECT_EQ(read_file(path("a.kty")), read_file(path("b.kty")));
}

TEST(TensorDecode, DistinctErrors) {
  auto good = encode_tensor(HeadMatrix(2, 2, {1, 2, 3, 4}));

  auto bad_magic = good;
  std::copy_n("XXXX", 4, bad_magic.begin());
  EXPECT_EQ(code_of([&] { decode_tensor(bad_magic); }), ErrorCode::kBadMagic);

  auto truncated = good;
  truncated.pop_back();
  EXPECT_EQ(code_of([&] { decode_tensor(truncated); }), ErrorCode::kTruncated);
  EXPECT_EQ(code_of([&] { decode_tensor({'K', 'T', 'Y', '1', 0}); }), ErrorCode::kTruncated);

  auto dtype = good;
  dtype[4] = 0x07;
  EXPECT_EQ(code_of([&] { decode_tensor(dtype); }), ErrorCode::kUnknownDtype);

  auto rank = good;
  rank[5] = 3;
  EXPECT_EQ(code_of([&] { decode_tensor(rank); }), ErrorCode::kBadRank);

  auto nan = encode_tensor(HeadMatrix(1, 2, {1.0f, std::numeric_limits<float>::quiet_NaN()}));
  EXPECT_EQ(code_of([&] { decode_tensor(nan); }), ErrorCode::kNonFinite);

  auto huge = good;
  for (int i = 6; i < 22; ++i) huge[i] = 0xFF;
  EXPECT_EQ(code_of([&] { decode_tensor(huge); }), ErrorCode::kTruncated);
}

TEST(TensorDecode, MissingFileIsIoError) {
  EXPECT_EQ(code_of([] { read_tensor("/nonexistent/dir/x.kty"); }), ErrorCode::kIo);
}

TEST(Synthetic, SameSeedSameMatrix) {
  const SyntheticSpec spec{64, 16, {1, 5}, 8.0f, 0.5f, 42};
  EXPECT_TRUE(bit_equal(generate_synthetic(spec), generate_synthetic(spec)));
  SyntheticSpec other = spec;
  other.seed = 43;
  EXPECT_FALSE(bit_equal(generate_synthetic(spec), generate_synthetic(other)));
}

TEST(Synthetic, OutlierColumnIsScaledByGain) {
  const HeadMatrix m = generate_synthetic({1024, 16, {3}, 8.0f, 1.0f, 1});
  ASSERT_TRUE(m.all_finite());
  double outlier = 0.0;
  double others = 0.0;
  for (std::size_t t = 0; t < m.rows(); ++t)
    for (std::size_t c = 0; c < m.cols(); ++c) (c == 3 ? outlier : others) += std::fabs(m(t, c));
  outlier /= 1024.0;
  others /= 1024.0 * 15.0;
  const double ratio = outlier / others;
  EXPECT_GE(ratio, 4.0);
  EXPECT_LE(ratio, 16.0);
}

TEST(Synthetic, NoOutliersGivesEvenColumns) {
  const std::size_t tokens = 1024;
  const HeadMatrix m = generate_synthetic({tokens, 16, {}, 1.0f, 1.0f, 5});
  std::vector<double> means(m.cols(), 0.0);
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t t = 0; t < tokens; ++t)
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double a = std::fabs(m(t, c));
      means[c] += a / tokens;
      sum += a;
      sumsq += a * a;
    }
  const double n = static_cast<double>(tokens * m.cols());
  const double grand = sum / n;
  const double sigma_of_mean = std::sqrt(sumsq / n - grand * grand) / std::sqrt(static_cast<double>(tokens));
  for (double mean : means) EXPECT_LE(std::fabs(mean - grand), 3.0 * sigma_of_mean);
}

TEST(Synthetic, ValidationRejectsBadSpecs) {
  EXPECT_THROW(generate_synthetic({8, 4, {4}, 2.0f, 1.0f, 0}), Error);
  EXPECT_THROW(generate_synthetic({8, 4, {1, 1}, 2.0f, 1.0f, 0}), Error);
  EXPECT_THROW(generate_synthetic({8, 4, {}, 0.5f, 1.0f, 0}), Error);
  EXPECT_THROW(generate_synthetic({8, 4, {}, 1.0f, 0.0f, 0}), Error);
}

}  // namespace
}  // namespace kitty
