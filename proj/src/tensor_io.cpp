#include "kitty/tensor_io.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "kitty/rng.h"

namespace kitty {

static_assert(std::endian::native == std::endian::little, "KTY1 I/O assumes a little-endian host");

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const HeadMatrix& m) {
  std::vector<std::uint8_t> out;
  out.reserve(kTensorHeaderBytes + m.data().size() * sizeof(float));
  out.insert(out.end(), std::begin(kTensorMagic), std::end(kTensorMagic));
  out.push_back(kDtypeF32);
  out.push_back(2);
  put_u64(out, m.rows());
  put_u64(out, m.cols());
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(m.data().data());
  out.insert(out.end(), bytes, bytes + m.data().size() * sizeof(float));
  return out;
}

HeadMatrix decode_tensor(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, std::begin(kTensorMagic)),
          ErrorCode::kBadMagic, "expected KTY1 header");
  require(bytes.size() >= kTensorHeaderBytes, ErrorCode::kTruncated, "header shorter than 22 bytes");
  require(bytes[4] == kDtypeF32, ErrorCode::kUnknownDtype, "dtype code " + std::to_string(bytes[4]));
  require(bytes[5] == 2, ErrorCode::kBadRank, "rank " + std::to_string(bytes[5]));
  const std::uint64_t rows = get_u64(bytes.data() + 6);
  const std::uint64_t cols = get_u64(bytes.data() + 14);
  const std::size_t payload = bytes.size() - kTensorHeaderBytes;
  // rows*cols*4 must not wrap before it is compared with the payload size.
  require(cols == 0 || rows <= SIZE_MAX / sizeof(float) / cols, ErrorCode::kTruncated,
          "dims exceed addressable payload");
  require(payload == rows * cols * sizeof(float), ErrorCode::kTruncated,
          "payload is " + std::to_string(payload) + " bytes, dims imply " +
              std::to_string(rows * cols * sizeof(float)));
  std::vector<float> data(rows * cols);
  if (!data.empty()) std::memcpy(data.data(), bytes.data() + kTensorHeaderBytes, payload);
  HeadMatrix m(rows, cols, std::move(data));
  require(m.all_finite(), ErrorCode::kNonFinite, "tensor contains NaN or Inf");
  return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

HeadMatrix read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }

void write_tensor(const HeadMatrix& m, const std::filesystem::path& path) {
  write_file(encode_tensor(m), path);
}

void SyntheticSpec::validate() const {
  std::set<std::size_t> seen;
  for (std::size_t c : outlier_channels) {
    require(c < channels, ErrorCode::kInvalidArgument,
            "outlier channel " + std::to_string(c) + " >= channels " + std::to_string(channels));
    require(seen.insert(c).second, ErrorCode::kInvalidArgument,
            "duplicate outlier channel " + std::to_string(c));
  }
  require(outlier_gain >= 1.0f, ErrorCode::kInvalidArgument, "outlier_gain must be >= 1");
  require(base_std > 0.0f, ErrorCode::kInvalidArgument, "base_std must be > 0");
}

HeadMatrix generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<float> gain(spec.channels, 1.0f);
  for (std::size_t c : spec.outlier_channels) gain[c] = spec.outlier_gain;

  Rng rng(spec.seed);
  HeadMatrix m(spec.tokens, spec.channels);
  for (std::size_t t = 0; t < spec.tokens; ++t)
    for (std::size_t c = 0; c < spec.channels; ++c)
      m(t, c) = static_cast<float>(rng.gaussian() * spec.base_std) * gain[c];
  return m;
}

}  // namespace kitty
