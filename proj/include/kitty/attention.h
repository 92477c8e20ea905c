#pragma once

#include <optional>
#include <span>

#include "kitty/head_matrix.h"

namespace kitty {

struct AttentionOutput {
  HeadMatrix outputs;                       // h_q x d
  std::optional<HeadMatrix> probabilities;  // h_q x tokens, when requested
};

// Max-subtracted softmax in 32-bit arithmetic.
void stable_softmax(std::span<float> logits);

// Dense single-pass attention over raw per-KV-head histories (tokens x d).
// Query head h reads KV head h * h_kv / h_q. A non-zero `prefix_tokens`
// restricts attention to the first that many rows.
AttentionOutput oracle_attend(std::span<const HeadMatrix> keys, std::span<const HeadMatrix> values,
                              const HeadMatrix& queries, bool with_probabilities = false,
                              std::size_t prefix_tokens = 0);

// max_i |a_i - b_i| / max_i |b_i| per row, maximised over rows.
double max_relative_deviation(const HeadMatrix& a, const HeadMatrix& b);

}  // namespace kitty
