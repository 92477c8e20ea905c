#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "kitty/config.h"
#include "kitty/head_matrix.h"
#include "kitty/quant.h"

namespace kitty {

// boost_idx value marking a channel that is stored at 2 bits only.
inline constexpr std::uint8_t kBoostSentinel = 0xFF;

// One page of G key tokens, stored channel-major. Every channel keeps its low
// two code bits in `dense_low`; boosted channels keep their high two bits in
// the compact `high_bits` row selected by boost_idx[channel].
//
// Packing: token t of a row lives in byte t/4 at bit offset 2*(t%4).
struct QuantizedKeyPage {
  std::size_t d = 0;
  std::size_t g = 0;
  std::size_t d_boost = 0;
  std::vector<std::uint8_t> dense_low;  // d * g/4
  std::vector<std::uint8_t> high_bits;  // d_boost * g/4
  std::vector<std::uint8_t> boost_idx;  // d
  std::vector<float> scales;            // d
  std::vector<float> zero_points;       // d

  friend bool operator==(const QuantizedKeyPage&, const QuantizedKeyPage&) = default;
};

// One page of G value tokens, token-major: token t, channel c lives in
// byte t*(d/4) + c/4 at bit offset 2*(c%4). One scale per token.
struct QuantizedValuePage {
  std::size_t g = 0;
  std::size_t d = 0;
  std::vector<std::uint8_t> codes;  // g * d/4
  std::vector<float> scales;        // g
  std::vector<float> zero_points;   // g

  friend bool operator==(const QuantizedValuePage&, const QuantizedValuePage&) = default;
};

// `tokens` is G x D. Boosted channels are quantized at 4 bits, the rest at 2,
// each over the page's G tokens.
QuantizedKeyPage pack_key_page(const HeadMatrix& tokens, const BoostSelection& sel);
// Returns the D x G (channel-major) reconstruction.
HeadMatrix dequantize_key_page(const QuantizedKeyPage& page);

QuantizedValuePage pack_value_page(const HeadMatrix& tokens);
// Returns the G x D reconstruction.
HeadMatrix dequantize_value_page(const QuantizedValuePage& page);

// Throws kMalformedSentinel unless exactly d_boost entries are non-sentinel
// and they map one-to-one onto [0, d_boost).
void check_boost_index(const QuantizedKeyPage& page);

enum class PageKind : std::uint8_t { kKey = 0, kValue = 1 };

struct PageBytes {
  std::size_t dense_low = 0;  // value pages: the packed codes
  std::size_t high_bits = 0;
  std::size_t boost_idx = 0;
  std::size_t scales = 0;
  std::size_t zero_points = 0;
  std::size_t raw = 0;  // pass-through pages only

  std::size_t total() const { return dense_low + high_bits + boost_idx + scales + zero_points + raw; }
};

// Byte breakdown of one page under `cfg`. Metadata defaults to 16-bit
// accounting; pass-through pages count 2 bytes per element.
PageBytes page_byte_size(PageKind kind, const KittyConfig& cfg, std::size_t metadata_bytes = 2);

// KTYP: "KTYP" | u8 kind | u16 D | u16 G | u16 d_boost | components in
// declaration order (metadata as f32), little-endian, no padding.
inline constexpr char kPageMagic[4] = {'K', 'T', 'Y', 'P'};
inline constexpr std::size_t kPageHeaderBytes = 4 + 1 + 3 * 2;

std::vector<std::uint8_t> serialize_page(const QuantizedKeyPage& page);
std::vector<std::uint8_t> serialize_page(const QuantizedValuePage& page);
std::variant<QuantizedKeyPage, QuantizedValuePage> deserialize_page(const std::vector<std::uint8_t>& bytes);

}  // namespace kitty
