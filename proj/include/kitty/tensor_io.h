#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kitty/head_matrix.h"

namespace kitty {

// KTY1 layout, little-endian: "KTY1" | u8 dtype (0 = f32) | u8 rank (2) |
// u64 rows | u64 cols | rows*cols f32 row-major. No padding.
inline constexpr char kTensorMagic[4] = {'K', 'T', 'Y', '1'};
inline constexpr std::uint8_t kDtypeF32 = 0x00;
inline constexpr std::size_t kTensorHeaderBytes = 4 + 1 + 1 + 2 * 8;

std::vector<std::uint8_t> encode_tensor(const HeadMatrix& m);
HeadMatrix decode_tensor(const std::vector<std::uint8_t>& bytes);

HeadMatrix read_tensor(const std::filesystem::path& path);
void write_tensor(const HeadMatrix& m, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path);

struct SyntheticSpec {
  std::size_t tokens = 0;
  std::size_t channels = 0;
  std::vector<std::size_t> outlier_channels;
  float outlier_gain = 1.0f;
  float base_std = 1.0f;
  std::uint64_t seed = 0;

  void validate() const;
};

// Gaussian(0, base_std^2) entries drawn row-major; columns listed in
// outlier_channels are scaled by outlier_gain.
HeadMatrix generate_synthetic(const SyntheticSpec& spec);

}  // namespace kitty
