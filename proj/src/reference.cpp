#include "kitty/reference.h"

#include <algorithm>
#include <cmath>

#include "kitty/analysis.h"

namespace kitty::reference {

namespace {

std::vector<float> fake_quantize_lane(const std::vector<float>& lane, int bits) {
  if (bits == kPassThroughBits) return lane;
  const QuantizedLane q = quantize_values(lane, bits);
  return dequantize_values(q.codes, q.params);
}

std::uint8_t get2(const std::vector<std::uint8_t>& bytes, std::size_t element) {
  return (bytes[element / 4] >> (2 * (element % 4))) & 0x3;
}

void put2(std::vector<std::uint8_t>& bytes, std::size_t element, std::uint8_t v) {
  bytes[element / 4] |= static_cast<std::uint8_t>(v << (2 * (element % 4)));
}

}  // namespace

ChannelScores channel_scores(const HeadMatrix& x) {
  require(x.rows() > 0 && x.cols() > 0, ErrorCode::kEmptyInput, "channel scores need at least one token");
  ChannelScores s(x.cols(), 0.0f);
  for (std::size_t c = 0; c < x.cols(); ++c) {
    for (std::size_t t = 0; t < x.rows(); ++t) s[c] += std::fabs(x(t, c));
    s[c] /= static_cast<float>(x.rows());
  }
  return s;
}

HeadMatrix fake_quantize_matrix(const HeadMatrix& x, QuantAxis axis, std::span<const int> bits_per_lane) {
  const bool per_channel = axis == QuantAxis::kPerChannel;
  const std::size_t lanes = per_channel ? x.cols() : x.rows();
  require(bits_per_lane.size() == lanes, ErrorCode::kShapeMismatch, "lane width count mismatch");
  HeadMatrix out(x.rows(), x.cols());
  if (x.empty()) return out;
  for (std::size_t lane = 0; lane < lanes; ++lane) {
    const std::vector<float> in =
        per_channel ? x.column(lane) : std::vector<float>(x.row(lane).begin(), x.row(lane).end());
    const std::vector<float> y = fake_quantize_lane(in, bits_per_lane[lane]);
    for (std::size_t i = 0; i < y.size(); ++i) (per_channel ? out(i, lane) : out(lane, i)) = y[i];
  }
  return out;
}

QuantizedKeyPage pack_key_page(const HeadMatrix& tokens, const BoostSelection& sel) {
  const std::size_t g = tokens.rows();
  const std::size_t d = tokens.cols();
  require(g > 0 && g % 4 == 0, ErrorCode::kInvalidArgument, "key page token count must be a multiple of 4");
  QuantizedKeyPage page;
  page.d = d;
  page.g = g;
  page.d_boost = sel.d_boost();
  page.boost_idx.assign(d, kBoostSentinel);
  for (std::size_t i = 0; i < sel.boosted.size(); ++i) page.boost_idx.at(sel.boosted[i]) = static_cast<std::uint8_t>(i);
  page.dense_low.assign(d * g / 4, 0);
  page.high_bits.assign(page.d_boost * g / 4, 0);
  for (std::size_t c = 0; c < d; ++c) {
    const bool boosted = page.boost_idx[c] != kBoostSentinel;
    const QuantizedLane q = quantize_values(tokens.column(c), boosted ? 4 : 2);
    page.scales.push_back(q.params.scale);
    page.zero_points.push_back(q.params.zero_point);
    for (std::size_t t = 0; t < g; ++t) {
      put2(page.dense_low, c * g + t, q.codes[t] & 0x3);
      if (boosted) put2(page.high_bits, page.boost_idx[c] * g + t, q.codes[t] >> 2);
    }
  }
  return page;
}

HeadMatrix dequantize_key_page(const QuantizedKeyPage& page) {
  check_boost_index(page);
  HeadMatrix out(page.d, page.g);
  for (std::size_t c = 0; c < page.d; ++c) {
    const std::uint8_t idx = page.boost_idx[c];
    const bool boosted = idx != kBoostSentinel;
    const QuantParams p{boosted ? 4 : 2, page.scales[c], page.zero_points[c]};
    for (std::size_t t = 0; t < page.g; ++t) {
      unsigned code = get2(page.dense_low, c * page.g + t);
      if (boosted) code |= static_cast<unsigned>(get2(page.high_bits, idx * page.g + t)) << 2;
      out(c, t) = decode_value(code, p);
    }
  }
  return out;
}

QuantizedValuePage pack_value_page(const HeadMatrix& tokens) {
  require(tokens.cols() % 4 == 0, ErrorCode::kShapeMismatch, "value page channel count must be a multiple of 4");
  QuantizedValuePage page;
  page.g = tokens.rows();
  page.d = tokens.cols();
  page.codes.assign(page.g * page.d / 4, 0);
  for (std::size_t t = 0; t < page.g; ++t) {
    const QuantizedLane q = quantize_values(tokens.row(t), 2);
    page.scales.push_back(q.params.scale);
    page.zero_points.push_back(q.params.zero_point);
    for (std::size_t c = 0; c < page.d; ++c) put2(page.codes, t * page.d + c, q.codes[c]);
  }
  return page;
}

HeadMatrix dequantize_value_page(const QuantizedValuePage& page) {
  HeadMatrix out(page.g, page.d);
  for (std::size_t t = 0; t < page.g; ++t) {
    const QuantParams p{2, page.scales[t], page.zero_points[t]};
    for (std::size_t c = 0; c < page.d; ++c) out(t, c) = decode_value(get2(page.codes, t * page.d + c), p);
  }
  return out;
}

AttentionOutput attend(std::span<const HeadMatrix> keys, std::span<const HeadMatrix> values,
                       const HeadMatrix& queries) {
  const std::size_t h_q = queries.rows();
  const std::size_t h_kv = keys.size();
  const std::size_t d = queries.cols();
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));
  AttentionOutput result{HeadMatrix(h_q, d), std::nullopt};
  for (std::size_t h = 0; h < h_q; ++h) {
    const HeadMatrix& k = keys[h * h_kv / h_q];
    const HeadMatrix& v = values[h * h_kv / h_q];
    std::vector<float> p(k.rows());
    for (std::size_t t = 0; t < k.rows(); ++t) {
      float acc = 0.0f;
      for (std::size_t c = 0; c < d; ++c) acc += queries(h, c) * k(t, c);
      p[t] = acc * inv_sqrt_d;
    }
    stable_softmax(p);
    for (std::size_t t = 0; t < k.rows(); ++t)
      for (std::size_t c = 0; c < d; ++c) result.outputs(h, c) += p[t] * v(t, c);
  }
  return result;
}

std::vector<std::vector<double>> channel_sensitivity(std::span<const HeadMatrix> queries,
                                                     std::span<const HeadMatrix> keys, int bits) {
  const std::size_t h_q = queries.size();
  const std::size_t h_kv = keys.size();
  const std::size_t d = keys[0].cols();
  std::vector<std::vector<double>> mse(h_q, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < h_q; ++h) {
    const HeadMatrix& k = keys[h * h_kv / h_q];
    const std::vector<double> base = attention_probabilities(queries[h], k);
    for (std::size_t c = 0; c < d; ++c) {
      std::vector<int> widths(d, kPassThroughBits);
      widths[c] = bits;
      const HeadMatrix perturbed = reference::fake_quantize_matrix(k, QuantAxis::kPerChannel, widths);
      mse[h][c] = mean_squared_error(base, attention_probabilities(queries[h], perturbed));
    }
  }
  return mse;
}

}  // namespace kitty::reference
