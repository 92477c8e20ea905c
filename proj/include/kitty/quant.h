#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kitty/head_matrix.h"

namespace kitty {

// Lane width meaning "store the lane unquantized".
inline constexpr int kPassThroughBits = 16;

// Asymmetric uniform quantizer for one group: value = code * scale + zero_point.
struct QuantParams {
  int bits = 2;
  float scale = 0.0f;
  float zero_point = 0.0f;

  std::uint32_t max_code() const { return (1u << bits) - 1u; }
};

// scale = (max - min) / (2^bits - 1), zero_point = min. A constant group
// gets scale 0 so every code is 0 and dequantizes to zero_point exactly.
QuantParams fit_params(std::span<const float> xs, int bits);

// Round-half-even, clamped to [0, 2^bits - 1].
std::uint8_t encode_value(float x, const QuantParams& p);

inline float decode_value(std::uint32_t code, const QuantParams& p) {
  return static_cast<float>(code) * p.scale + p.zero_point;
}

struct QuantizedLane {
  std::vector<std::uint8_t> codes;
  QuantParams params;
};

QuantizedLane quantize_values(std::span<const float> xs, int bits);
std::vector<float> dequantize_values(std::span<const std::uint8_t> codes, const QuantParams& params);

// s_i = mean_t |x[t][i]| over the rows of a tokens x channels matrix.
using ChannelScores = std::vector<float>;
ChannelScores channel_scores(const HeadMatrix& x);

struct BoostHeuristic {
  enum class Kind { kMagnitude, kRandom };
  Kind kind = Kind::kMagnitude;
  std::uint64_t seed = 0;  // used by kRandom only

  static BoostHeuristic magnitude() { return {}; }
  static BoostHeuristic random(std::uint64_t seed) { return {Kind::kRandom, seed}; }
};

struct BoostSelection {
  std::vector<std::size_t> boosted;  // ascending channel indices
  std::size_t d_boost() const { return boosted.size(); }
};

// round_half_even(fraction * channels).
std::size_t boost_count(double fraction, std::size_t channels);

// Top-K channels by score (ties to the lower index). The random heuristic
// draws a uniform score per channel from the seed and ranks those instead.
BoostSelection select_boost(std::span<const float> scores, double fraction, const BoostHeuristic& heuristic);

// Per-channel lane widths: 4 for boosted channels, 2 otherwise.
std::vector<int> lane_bits(const BoostSelection& sel, std::size_t channels);

enum class QuantAxis { kPerChannel, kPerToken };

// Quantize-then-dequantize every lane (a column for kPerChannel, a row for
// kPerToken) at its own width in {2, 4, 16}; 16 copies the lane untouched.
HeadMatrix fake_quantize_matrix(const HeadMatrix& x, QuantAxis axis, std::span<const int> bits_per_lane);

}  // namespace kitty
