#pragma once

// Single-threaded, element-at-a-time versions of the parallel kernels.
// Tests hold the parallel kernels to bit-equality with these, and the
// benchmark compares the two.

#include <span>
#include <vector>

#include "kitty/attention.h"
#include "kitty/head_matrix.h"
#include "kitty/page_codec.h"
#include "kitty/quant.h"

namespace kitty::reference {

ChannelScores channel_scores(const HeadMatrix& x);
HeadMatrix fake_quantize_matrix(const HeadMatrix& x, QuantAxis axis, std::span<const int> bits_per_lane);

QuantizedKeyPage pack_key_page(const HeadMatrix& tokens, const BoostSelection& sel);
HeadMatrix dequantize_key_page(const QuantizedKeyPage& page);
QuantizedValuePage pack_value_page(const HeadMatrix& tokens);
HeadMatrix dequantize_value_page(const QuantizedValuePage& page);

AttentionOutput attend(std::span<const HeadMatrix> keys, std::span<const HeadMatrix> values,
                       const HeadMatrix& queries);

// Recomputes every perturbed attention matrix from scratch:
// mse[h][c] for query head h, channel c.
std::vector<std::vector<double>> channel_sensitivity(std::span<const HeadMatrix> queries,
                                                     std::span<const HeadMatrix> keys, int bits);

}  // namespace kitty::reference
