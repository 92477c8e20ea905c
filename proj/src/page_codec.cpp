#include "kitty/page_codec.h"

#include <algorithm>
#include <array>
#include <cstring>
#include <iterator>

namespace kitty {

namespace {

constexpr std::array<unsigned, 4> kShifts = {0, 2, 4, 6};

void check_finite(const HeadMatrix& m) {
  require(m.all_finite(), ErrorCode::kNonFinite, "page input contains NaN or Inf");
}

// Per-channel min/max over a strided column of a token-major block.
QuantParams fit_column(const float* col, std::size_t tokens, std::size_t stride, int bits) {
  float lo = col[0];
  float hi = col[0];
  for (std::size_t t = 1; t < tokens; ++t) {
    lo = std::min(lo, col[t * stride]);
    hi = std::max(hi, col[t * stride]);
  }
  QuantParams p{bits, 0.0f, lo};
  if (hi > lo) p.scale = (hi - lo) / static_cast<float>(p.max_code());
  return p;
}

class ByteWriter {
 public:
  void bytes(const std::vector<std::uint8_t>& v) { out_.insert(out_.end(), v.begin(), v.end()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::size_t v) {
    require(v <= 0xFFFF, ErrorCode::kInvalidArgument, "page dimension exceeds 16 bits");
    out_.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void floats(const std::vector<float>& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    out_.insert(out_.end(), p, p + v.size() * sizeof(float));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& in) : in_(in) {}
  void need(std::size_t n) const {
    require(pos_ + n <= in_.size(), ErrorCode::kTruncated, "page ends early");
  }
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::size_t u16() {
    need(2);
    const std::size_t v = in_[pos_] | (static_cast<std::size_t>(in_[pos_ + 1]) << 8);
    pos_ += 2;
    return v;
  }
  std::vector<std::uint8_t> bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> v(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return v;
  }
  std::vector<float> floats(std::size_t n) {
    need(n * sizeof(float));
    std::vector<float> v(n);
    if (n) std::memcpy(v.data(), in_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

QuantizedKeyPage pack_key_page(const HeadMatrix& tokens, const BoostSelection& sel) {
  const std::size_t g = tokens.rows();
  const std::size_t d = tokens.cols();
  require(g > 0 && g % 4 == 0, ErrorCode::kInvalidArgument, "key page token count must be a positive multiple of 4");
  require(sel.d_boost() <= kBoostSentinel, ErrorCode::kInvalidArgument, "too many boosted channels");
  check_finite(tokens);

  QuantizedKeyPage page;
  page.d = d;
  page.g = g;
  page.d_boost = sel.d_boost();
  page.boost_idx.assign(d, kBoostSentinel);
  for (std::size_t i = 0; i < sel.boosted.size(); ++i) {
    const std::size_t c = sel.boosted[i];
    require(c < d, ErrorCode::kShapeMismatch, "boosted channel " + std::to_string(c) + " >= D");
    require(page.boost_idx[c] == kBoostSentinel, ErrorCode::kInvalidArgument, "duplicate boosted channel");
    page.boost_idx[c] = static_cast<std::uint8_t>(i);
  }

  const std::size_t row_bytes = g / 4;
  page.dense_low.assign(d * row_bytes, 0);
  page.high_bits.assign(page.d_boost * row_bytes, 0);
  page.scales.resize(d);
  page.zero_points.resize(d);

  const float* data = tokens.data().data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(d); ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    const bool boosted = page.boost_idx[c] != kBoostSentinel;
    const QuantParams p = fit_column(data + c, g, d, boosted ? 4 : 2);
    page.scales[c] = p.scale;
    page.zero_points[c] = p.zero_point;
    std::uint8_t* low = page.dense_low.data() + c * row_bytes;
    std::uint8_t* high = boosted ? page.high_bits.data() + page.boost_idx[c] * row_bytes : nullptr;
    for (std::size_t t = 0; t < g; ++t) {
      const std::uint8_t code = encode_value(data[t * d + c], p);
      const unsigned shift = kShifts[t % 4];
      low[t / 4] |= static_cast<std::uint8_t>((code & 0x3) << shift);
      if (high) high[t / 4] |= static_cast<std::uint8_t>((code >> 2) << shift);
    }
  }
  return page;
}

void check_boost_index(const QuantizedKeyPage& page) {
  require(page.boost_idx.size() == page.d, ErrorCode::kMalformedSentinel, "boost index length != D");
  std::vector<bool> seen(page.d_boost, false);
  std::size_t live = 0;
  for (std::uint8_t idx : page.boost_idx) {
    if (idx == kBoostSentinel) continue;
    ++live;
    require(idx < page.d_boost && !seen[idx], ErrorCode::kMalformedSentinel,
            "boost index " + std::to_string(idx) + " is out of range or repeated");
    seen[idx] = true;
  }
  require(live == page.d_boost, ErrorCode::kMalformedSentinel,
          std::to_string(live) + " boosted entries, header says " + std::to_string(page.d_boost));
}

HeadMatrix dequantize_key_page(const QuantizedKeyPage& page) {
  check_boost_index(page);
  const std::size_t row_bytes = page.g / 4;
  require(page.dense_low.size() == page.d * row_bytes && page.high_bits.size() == page.d_boost * row_bytes &&
              page.scales.size() == page.d && page.zero_points.size() == page.d,
          ErrorCode::kShapeMismatch, "key page component sizes disagree with its header");

  HeadMatrix out(page.d, page.g);
  const std::uint8_t d_boost = static_cast<std::uint8_t>(std::min<std::size_t>(page.d_boost, 0xFF));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(page.d); ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    const std::uint8_t idx = page.boost_idx[c];
    const bool boost_mask = idx < d_boost;
    const std::uint8_t* low = page.dense_low.data() + c * row_bytes;
    const std::uint8_t* high = boost_mask ? page.high_bits.data() + idx * row_bytes : nullptr;
    const QuantParams p{boost_mask ? 4 : 2, page.scales[c], page.zero_points[c]};
    float* dst = out.row(c).data();
    for (std::size_t b = 0; b < row_bytes; ++b) {
      const std::uint8_t low_byte = low[b];
      const std::uint8_t high_byte = high ? high[b] : 0;
      for (unsigned k = 0; k < 4; ++k) {
        const unsigned x_low = (low_byte >> kShifts[k]) & 0x3u;
        const unsigned x_high = (high_byte >> kShifts[k]) & 0x3u;
        dst[4 * b + k] = decode_value(x_low | (x_high << 2), p);
      }
    }
  }
  return out;
}

QuantizedValuePage pack_value_page(const HeadMatrix& tokens) {
  const std::size_t g = tokens.rows();
  const std::size_t d = tokens.cols();
  require(g > 0, ErrorCode::kEmptyInput, "value page needs at least one token");
  require(d > 0 && d % 4 == 0, ErrorCode::kShapeMismatch, "value page channel count must be a positive multiple of 4");
  check_finite(tokens);

  QuantizedValuePage page;
  page.g = g;
  page.d = d;
  const std::size_t row_bytes = d / 4;
  page.codes.assign(g * row_bytes, 0);
  page.scales.resize(g);
  page.zero_points.resize(g);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ti = 0; ti < static_cast<std::ptrdiff_t>(g); ++ti) {
    const auto t = static_cast<std::size_t>(ti);
    const auto row = tokens.row(t);
    const QuantParams p = fit_column(row.data(), d, 1, 2);
    page.scales[t] = p.scale;
    page.zero_points[t] = p.zero_point;
    std::uint8_t* dst = page.codes.data() + t * row_bytes;
    for (std::size_t c = 0; c < d; ++c)
      dst[c / 4] |= static_cast<std::uint8_t>(encode_value(row[c], p) << kShifts[c % 4]);
  }
  return page;
}

HeadMatrix dequantize_value_page(const QuantizedValuePage& page) {
  const std::size_t row_bytes = page.d / 4;
  require(page.d % 4 == 0 && page.codes.size() == page.g * row_bytes && page.scales.size() == page.g &&
              page.zero_points.size() == page.g,
          ErrorCode::kShapeMismatch, "value page component sizes disagree with its header");
  HeadMatrix out(page.g, page.d);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ti = 0; ti < static_cast<std::ptrdiff_t>(page.g); ++ti) {
    const auto t = static_cast<std::size_t>(ti);
    const QuantParams p{2, page.scales[t], page.zero_points[t]};
    const std::uint8_t* src = page.codes.data() + t * row_bytes;
    float* dst = out.row(t).data();
    for (std::size_t b = 0; b < row_bytes; ++b)
      for (unsigned k = 0; k < 4; ++k) dst[4 * b + k] = decode_value((src[b] >> kShifts[k]) & 0x3u, p);
  }
  return out;
}

PageBytes page_byte_size(PageKind kind, const KittyConfig& cfg, std::size_t metadata_bytes) {
  cfg.validate();
  PageBytes bytes;
  const bool passthrough = (kind == PageKind::kKey ? cfg.key_bits : cfg.value_bits) == kPassThroughBits;
  if (passthrough) {
    bytes.raw = cfg.g * cfg.d * 2;
    return bytes;
  }
  bytes.dense_low = cfg.d * cfg.g / 4;
  if (kind == PageKind::kKey) {
    bytes.high_bits = cfg.d_boost() * cfg.g / 4;
    bytes.boost_idx = cfg.d;
    bytes.scales = cfg.d * metadata_bytes;
    bytes.zero_points = cfg.d * metadata_bytes;
  } else {
    bytes.scales = cfg.g * metadata_bytes;
    bytes.zero_points = cfg.g * metadata_bytes;
  }
  return bytes;
}

std::vector<std::uint8_t> serialize_page(const QuantizedKeyPage& page) {
  ByteWriter w;
  for (char ch : kPageMagic) w.u8(static_cast<std::uint8_t>(ch));
  w.u8(static_cast<std::uint8_t>(PageKind::kKey));
  w.u16(page.d);
  w.u16(page.g);
  w.u16(page.d_boost);
  w.bytes(page.dense_low);
  w.bytes(page.high_bits);
  w.bytes(page.boost_idx);
  w.floats(page.scales);
  w.floats(page.zero_points);
  return w.take();
}

std::vector<std::uint8_t> serialize_page(const QuantizedValuePage& page) {
  ByteWriter w;
  for (char ch : kPageMagic) w.u8(static_cast<std::uint8_t>(ch));
  w.u8(static_cast<std::uint8_t>(PageKind::kValue));
  w.u16(page.d);
  w.u16(page.g);
  w.u16(0);
  w.bytes(page.codes);
  w.floats(page.scales);
  w.floats(page.zero_points);
  return w.take();
}

std::variant<QuantizedKeyPage, QuantizedValuePage> deserialize_page(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, std::begin(kPageMagic)),
          ErrorCode::kBadMagic, "expected KTYP header");
  ByteReader r(bytes);
  r.bytes(4);
  const std::uint8_t kind = r.u8();
  const std::size_t d = r.u16();
  const std::size_t g = r.u16();
  const std::size_t d_boost = r.u16();
  require(g % 4 == 0 && d % 4 == 0, ErrorCode::kShapeMismatch, "page dims must be multiples of 4");
  if (kind == static_cast<std::uint8_t>(PageKind::kKey)) {
    QuantizedKeyPage page;
    page.d = d;
    page.g = g;
    page.d_boost = d_boost;
    page.dense_low = r.bytes(d * g / 4);
    page.high_bits = r.bytes(d_boost * g / 4);
    page.boost_idx = r.bytes(d);
    page.scales = r.floats(d);
    page.zero_points = r.floats(d);
    require(r.done(), ErrorCode::kShapeMismatch, "trailing bytes after key page");
    check_boost_index(page);
    return page;
  }
  require(kind == static_cast<std::uint8_t>(PageKind::kValue), ErrorCode::kUnknownDtype,
          "page kind " + std::to_string(kind));
  QuantizedValuePage page;
  page.d = d;
  page.g = g;
  page.codes = r.bytes(g * d / 4);
  page.scales = r.floats(g);
  page.zero_points = r.floats(g);
  require(r.done(), ErrorCode::kShapeMismatch, "trailing bytes after value page");
  return page;
}

}  // namespace kitty
