#include "kitty/head_matrix.h"

#include <cmath>
#include <cstring>

namespace kitty {

std::vector<float> HeadMatrix::column(std::size_t c) const {
  std::vector<float> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = data_[r * cols_ + c];
  return out;
}

HeadMatrix HeadMatrix::transposed() const {
  HeadMatrix out(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
  return out;
}

HeadMatrix HeadMatrix::slice_rows(std::size_t first, std::size_t count) const {
  require(first + count <= rows_, ErrorCode::kShapeMismatch, "row slice out of range");
  std::vector<float> data(data_.begin() + static_cast<std::ptrdiff_t>(first * cols_),
                          data_.begin() + static_cast<std::ptrdiff_t>((first + count) * cols_));
  return HeadMatrix(count, cols_, std::move(data));
}

bool HeadMatrix::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool bit_equal(const HeadMatrix& a, const HeadMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return a.data().empty() ||
         std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0;
}

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kEmptyInput: return "empty input";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kCodeOutOfRange: return "code out of range";
    case ErrorCode::kMalformedSentinel: return "malformed boost index";
    case ErrorCode::kStateNotEmpty: return "cache state not empty";
    case ErrorCode::kEmptyCache: return "empty cache";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kUnknownDtype: return "unknown dtype";
    case ErrorCode::kBadRank: return "bad rank";
    case ErrorCode::kTruncated: return "truncated file";
    case ErrorCode::kIo: return "I/O error";
  }
  return "unknown error";
}

}  // namespace kitty
