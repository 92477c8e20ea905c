#include "kitty/attention.h"

#include <algorithm>
#include <cmath>

namespace kitty {

void stable_softmax(std::span<float> logits) {
  if (logits.empty()) return;
  const float peak = *std::max_element(logits.begin(), logits.end());
  float sum = 0.0f;
  for (float& x : logits) {
    x = std::exp(x - peak);
    sum += x;
  }
  const float inv = 1.0f / sum;
  for (float& x : logits) x *= inv;
}

AttentionOutput oracle_attend(std::span<const HeadMatrix> keys, std::span<const HeadMatrix> values,
                              const HeadMatrix& queries, bool with_probabilities, std::size_t prefix_tokens) {
  const std::size_t h_kv = keys.size();
  const std::size_t h_q = queries.rows();
  const std::size_t d = queries.cols();
  require(h_kv > 0 && values.size() == h_kv, ErrorCode::kShapeMismatch, "need one K and one V matrix per KV head");
  require(h_q % h_kv == 0, ErrorCode::kShapeMismatch, "query heads must be a multiple of KV heads");
  const std::size_t stored = keys[0].rows();
  require(prefix_tokens <= stored, ErrorCode::kShapeMismatch, "prefix longer than history");
  const std::size_t tokens = prefix_tokens ? prefix_tokens : stored;
  require(tokens > 0, ErrorCode::kEmptyCache, "attention over zero tokens");
  for (std::size_t h = 0; h < h_kv; ++h) {
    require(keys[h].rows() == stored && values[h].rows() == stored, ErrorCode::kShapeMismatch,
            "keys and values must share a token count");
    require(keys[h].cols() == d && values[h].cols() == d, ErrorCode::kShapeMismatch, "head size mismatch");
  }

  AttentionOutput result{HeadMatrix(h_q, d), std::nullopt};
  if (with_probabilities) result.probabilities.emplace(h_q, tokens);
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t hi = 0; hi < static_cast<std::ptrdiff_t>(h_q); ++hi) {
    const auto h = static_cast<std::size_t>(hi);
    const HeadMatrix& k = keys[h * h_kv / h_q];
    const HeadMatrix& v = values[h * h_kv / h_q];
    const auto q = queries.row(h);
    std::vector<float> p(tokens);
    for (std::size_t t = 0; t < tokens; ++t) {
      float acc = 0.0f;
      for (std::size_t c = 0; c < d; ++c) acc += q[c] * k(t, c);
      p[t] = acc * inv_sqrt_d;
    }
    stable_softmax(p);
    auto out = result.outputs.row(h);
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t c = 0; c < d; ++c) out[c] += p[t] * v(t, c);
    if (with_probabilities) std::copy(p.begin(), p.end(), result.probabilities->row(h).begin());
  }
  return result;
}

double max_relative_deviation(const HeadMatrix& a, const HeadMatrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kShapeMismatch, "deviation of mismatched shapes");
  double worst = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double diff = 0.0;
    double scale = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
      diff = std::max(diff, std::fabs(static_cast<double>(a(r, c)) - b(r, c)));
      scale = std::max(scale, std::fabs(static_cast<double>(b(r, c))));
    }
    if (diff > 0.0) worst = std::max(worst, scale > 0.0 ? diff / scale : INFINITY);
  }
  return worst;
}

}  // namespace kitty
