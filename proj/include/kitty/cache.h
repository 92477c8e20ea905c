#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "kitty/attention.h"
#include "kitty/config.h"
#include "kitty/page_codec.h"

namespace kitty {

// Growable stack of fixed-width float rows.
class RowStore {
 public:
  explicit RowStore(std::size_t width = 0) : width_(width) {}

  std::size_t rows() const { return width_ ? data_.size() / width_ : 0; }
  std::size_t width() const { return width_; }
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * width_, width_}; }
  void push(std::span<const float> r);
  void clear() { data_.clear(); }
  HeadMatrix to_matrix() const { return HeadMatrix(rows(), width_, data_); }

 private:
  std::size_t width_;
  std::vector<float> data_;
};

// Fixed-capacity FIFO of rows; row(0) is the oldest.
class RowRing {
 public:
  RowRing(std::size_t capacity = 0, std::size_t width = 0)
      : capacity_(capacity), width_(width), data_(capacity * width) {}

  std::size_t rows() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  bool full() const { return size_ == capacity_; }
  std::span<const float> row(std::size_t i) const {
    return {data_.data() + ((head_ + i) % capacity_) * width_, width_};
  }
  // Appends `r`; when full, the oldest row is evicted and returned.
  std::optional<std::vector<float>> push(std::span<const float> r);

 private:
  std::size_t capacity_;
  std::size_t width_;
  std::vector<float> data_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

// Quantized page, or the raw G x D block when the side runs in pass-through mode.
using KeyPage = std::variant<QuantizedKeyPage, HeadMatrix>;
using ValuePage = std::variant<QuantizedValuePage, HeadMatrix>;

// Storage for one KV head. Global token order:
//   keys   = key_sink | key_pages | key_qbuffer
//   values = value_sink | value_pages | value_qbuffer | value_local
struct HeadState {
  RowStore key_sink;
  RowStore key_qbuffer;
  std::vector<KeyPage> key_pages;
  RowStore value_sink;
  RowRing value_local;
  RowStore value_qbuffer;
  std::vector<ValuePage> value_pages;
  std::size_t key_pack_events = 0;
  std::size_t value_pack_events = 0;

  std::size_t key_tokens(std::size_t g) const;
  std::size_t value_tokens(std::size_t g) const;
};

struct PackEvents {
  std::size_t key = 0;
  std::size_t value = 0;
};

// Mixed-precision KV cache for one sequence: per KV head, a Sink, a key
// Q-Buffer feeding key pages, and a value Local window whose evictions feed a
// value Q-Buffer and value pages. Single writer; attend() is const.
class KittyCache {
 public:
  explicit KittyCache(KittyConfig cfg);

  const KittyConfig& config() const { return cfg_; }
  std::size_t total_tokens() const { return total_tokens_; }
  const HeadState& head(std::size_t kv_head) const { return heads_.at(kv_head); }

  // Batch insertion into an empty cache; the resulting state equals inserting
  // the rows one by one. keys/values hold one P x d matrix per KV head.
  void prefill(std::span<const HeadMatrix> keys, std::span<const HeadMatrix> values);

  // New K/V rows (h_kv x d) go to the FP buffers, then full Q-Buffers are packed.
  void insert_token(const HeadMatrix& k_new, const HeadMatrix& v_new);

  // Packs every Q-Buffer holding exactly G rows into a page.
  PackEvents maybe_pack();

  // queries: h_q x d.
  AttentionOutput attend(const HeadMatrix& queries, bool with_probabilities = false) const;

  // One decode step in pipeline order: insert, attend, then pack.
  AttentionOutput decode_step(const HeadMatrix& k_new, const HeadMatrix& v_new, const HeadMatrix& queries,
                              bool with_probabilities = false);

  // Full history per KV head in global order, pages dequantized.
  std::vector<HeadMatrix> materialize_keys() const;
  std::vector<HeadMatrix> materialize_values() const;

  // Throws kInvalidArgument naming the violated invariant.
  void check_invariants() const;

 private:
  void append_token(const HeadMatrix& k_new, const HeadMatrix& v_new);
  KeyPage make_key_page(const HeadMatrix& block, std::size_t kv_head, std::size_t ordinal) const;
  ValuePage make_value_page(const HeadMatrix& block) const;

  KittyConfig cfg_;
  std::vector<HeadState> heads_;
  std::size_t total_tokens_ = 0;
};

}  // namespace kitty
