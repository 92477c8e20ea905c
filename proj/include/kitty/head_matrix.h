#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kitty/error.h"

namespace kitty {

// Dense row-major float matrix holding one head's activations
// (tokens x channels for K/V/Q).
class HeadMatrix {
 public:
  HeadMatrix() = default;
  HeadMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}
  HeadMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorCode::kShapeMismatch,
            "data length does not equal rows*cols");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }

  std::vector<float> column(std::size_t c) const;
  HeadMatrix transposed() const;
  // Rows [first, first + count).
  HeadMatrix slice_rows(std::size_t first, std::size_t count) const;

  bool all_finite() const;

  friend bool operator==(const HeadMatrix&, const HeadMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// Bitwise equality (distinguishes -0.0 from 0.0 and compares NaN payloads).
bool bit_equal(const HeadMatrix& a, const HeadMatrix& b);

}  // namespace kitty
