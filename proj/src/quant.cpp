#include "kitty/quant.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kitty/rng.h"

namespace kitty {

namespace {

void check_bits(int bits) {
  require(bits == 2 || bits == 4, ErrorCode::kInvalidArgument,
          "quantizer width must be 2 or 4, got " + std::to_string(bits));
}

void check_lane_bits(int bits) {
  require(bits == 2 || bits == 4 || bits == kPassThroughBits, ErrorCode::kInvalidArgument,
          "lane width must be 2, 4 or 16, got " + std::to_string(bits));
}

// Quantize-dequantize one strided lane of `count` elements.
void fake_quantize_lane(const float* in, float* out, std::size_t count, std::size_t stride, int bits) {
  if (bits == kPassThroughBits) {
    for (std::size_t i = 0; i < count; ++i) out[i * stride] = in[i * stride];
    return;
  }
  float lo = in[0];
  float hi = in[0];
  for (std::size_t i = 1; i < count; ++i) {
    lo = std::min(lo, in[i * stride]);
    hi = std::max(hi, in[i * stride]);
  }
  QuantParams p{bits, 0.0f, lo};
  if (hi > lo) p.scale = (hi - lo) / static_cast<float>(p.max_code());
  for (std::size_t i = 0; i < count; ++i) out[i * stride] = decode_value(encode_value(in[i * stride], p), p);
}

}  // namespace

QuantParams fit_params(std::span<const float> xs, int bits) {
  check_bits(bits);
  require(!xs.empty(), ErrorCode::kEmptyInput, "cannot quantize an empty group");
  const auto [lo_it, hi_it] = std::minmax_element(xs.begin(), xs.end());
  QuantParams p{bits, 0.0f, *lo_it};
  if (*hi_it > *lo_it) p.scale = (*hi_it - *lo_it) / static_cast<float>(p.max_code());
  return p;
}

std::uint8_t encode_value(float x, const QuantParams& p) {
  if (p.scale == 0.0f) return 0;
  // nearbyint honours the default FE_TONEAREST mode: ties go to even.
  const float q = std::nearbyint((x - p.zero_point) / p.scale);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0f, static_cast<float>(p.max_code())));
}

QuantizedLane quantize_values(std::span<const float> xs, int bits) {
  require(!xs.empty(), ErrorCode::kEmptyInput, "cannot quantize an empty group");
  for (float x : xs) require(std::isfinite(x), ErrorCode::kNonFinite, "input contains NaN or Inf");
  QuantizedLane lane{{}, fit_params(xs, bits)};
  lane.codes.reserve(xs.size());
  for (float x : xs) lane.codes.push_back(encode_value(x, lane.params));
  return lane;
}

std::vector<float> dequantize_values(std::span<const std::uint8_t> codes, const QuantParams& params) {
  check_bits(params.bits);
  std::vector<float> out;
  out.reserve(codes.size());
  for (std::uint8_t c : codes) {
    require(c <= params.max_code(), ErrorCode::kCodeOutOfRange,
            "code " + std::to_string(c) + " exceeds " + std::to_string(params.max_code()));
    out.push_back(decode_value(c, params));
  }
  return out;
}

ChannelScores channel_scores(const HeadMatrix& x) {
  require(x.rows() > 0 && x.cols() > 0, ErrorCode::kEmptyInput, "channel scores need at least one token");
  const std::size_t tokens = x.rows();
  const std::size_t channels = x.cols();
  ChannelScores scores(channels, 0.0f);
  const float* data = x.data().data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(channels); ++c) {
    float acc = 0.0f;
    for (std::size_t t = 0; t < tokens; ++t) acc += std::fabs(data[t * channels + c]);
    scores[c] = acc / static_cast<float>(tokens);
  }
  return scores;
}

std::size_t boost_count(double fraction, std::size_t channels) {
  require(fraction >= 0.0 && fraction <= 1.0, ErrorCode::kInvalidArgument,
          "boost fraction must lie in [0, 1]");
  return static_cast<std::size_t>(std::nearbyint(fraction * static_cast<double>(channels)));
}

BoostSelection select_boost(std::span<const float> scores, double fraction, const BoostHeuristic& heuristic) {
  const std::size_t channels = scores.size();
  const std::size_t k = boost_count(fraction, channels);

  std::vector<double> rank_key(scores.begin(), scores.end());
  if (heuristic.kind == BoostHeuristic::Kind::kRandom) {
    Rng rng(heuristic.seed);
    for (double& r : rank_key) r = rng.uniform();
  }
  std::vector<std::size_t> order(channels);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rank_key[a] > rank_key[b]; });

  BoostSelection sel;
  sel.boosted.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(sel.boosted.begin(), sel.boosted.end());
  return sel;
}

std::vector<int> lane_bits(const BoostSelection& sel, std::size_t channels) {
  std::vector<int> bits(channels, 2);
  for (std::size_t c : sel.boosted) {
    require(c < channels, ErrorCode::kShapeMismatch, "boosted channel index out of range");
    bits[c] = 4;
  }
  return bits;
}

HeadMatrix fake_quantize_matrix(const HeadMatrix& x, QuantAxis axis, std::span<const int> bits_per_lane) {
  const bool per_channel = axis == QuantAxis::kPerChannel;
  const std::size_t lanes = per_channel ? x.cols() : x.rows();
  const std::size_t lane_len = per_channel ? x.rows() : x.cols();
  const std::size_t stride = per_channel ? x.cols() : 1;
  const std::size_t lane_step = per_channel ? 1 : x.cols();
  require(bits_per_lane.size() == lanes, ErrorCode::kShapeMismatch,
          "expected " + std::to_string(lanes) + " lane widths, got " + std::to_string(bits_per_lane.size()));
  for (int b : bits_per_lane) check_lane_bits(b);

  HeadMatrix out(x.rows(), x.cols());
  if (lane_len == 0) return out;
  const float* in = x.data().data();
  float* dst = out.data().data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t lane = 0; lane < static_cast<std::ptrdiff_t>(lanes); ++lane) {
    const std::size_t base = static_cast<std::size_t>(lane) * lane_step;
    fake_quantize_lane(in + base, dst + base, lane_len, stride, bits_per_lane[lane]);
  }
  return out;
}

}  // namespace kitty
