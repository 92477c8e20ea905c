#include "kitty/cache.h"

#include <algorithm>
#include <cmath>

#include "kitty/rng.h"

namespace kitty {

void RowStore::push(std::span<const float> r) {
  require(r.size() == width_, ErrorCode::kShapeMismatch, "row width mismatch");
  data_.insert(data_.end(), r.begin(), r.end());
}

std::optional<std::vector<float>> RowRing::push(std::span<const float> r) {
  require(r.size() == width_, ErrorCode::kShapeMismatch, "row width mismatch");
  std::optional<std::vector<float>> evicted;
  if (full()) {
    const auto oldest = row(0);
    evicted.emplace(oldest.begin(), oldest.end());
    head_ = (head_ + 1) % capacity_;
    --size_;
  }
  std::copy(r.begin(), r.end(), data_.begin() + static_cast<std::ptrdiff_t>(((head_ + size_) % capacity_) * width_));
  ++size_;
  return evicted;
}

std::size_t HeadState::key_tokens(std::size_t g) const {
  return key_sink.rows() + key_pages.size() * g + key_qbuffer.rows();
}

std::size_t HeadState::value_tokens(std::size_t g) const {
  return value_sink.rows() + value_pages.size() * g + value_qbuffer.rows() + value_local.rows();
}

namespace {

HeadMatrix page_tokens_major(const KeyPage& page) {
  if (const auto* raw = std::get_if<HeadMatrix>(&page)) return *raw;
  return dequantize_key_page(std::get<QuantizedKeyPage>(page)).transposed();
}

HeadMatrix page_tokens_major(const ValuePage& page) {
  if (const auto* raw = std::get_if<HeadMatrix>(&page)) return *raw;
  return dequantize_value_page(std::get<QuantizedValuePage>(page));
}

void append_rows(HeadMatrix& dst, std::size_t& at, const HeadMatrix& src) {
  std::copy(src.data().begin(), src.data().end(), dst.row(at).begin());
  at += src.rows();
}

void append_row(HeadMatrix& dst, std::size_t& at, std::span<const float> src) {
  std::copy(src.begin(), src.end(), dst.row(at).begin());
  ++at;
}

// Token-major view of one KV head's keys or values, pages dequantized.
template <typename Page>
std::vector<HeadMatrix> dequantize_pages(const std::vector<Page>& pages) {
  std::vector<HeadMatrix> out(pages.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(pages.size()); ++i)
    out[i] = page_tokens_major(pages[i]);
  return out;
}

HeadMatrix flatten_keys(const HeadState& hs, std::size_t total, std::size_t d) {
  HeadMatrix out(total, d);
  std::size_t at = 0;
  for (std::size_t i = 0; i < hs.key_sink.rows(); ++i) append_row(out, at, hs.key_sink.row(i));
  for (const HeadMatrix& page : dequantize_pages(hs.key_pages)) append_rows(out, at, page);
  for (std::size_t i = 0; i < hs.key_qbuffer.rows(); ++i) append_row(out, at, hs.key_qbuffer.row(i));
  return out;
}

HeadMatrix flatten_values(const HeadState& hs, std::size_t total, std::size_t d) {
  HeadMatrix out(total, d);
  std::size_t at = 0;
  for (std::size_t i = 0; i < hs.value_sink.rows(); ++i) append_row(out, at, hs.value_sink.row(i));
  for (const HeadMatrix& page : dequantize_pages(hs.value_pages)) append_rows(out, at, page);
  for (std::size_t i = 0; i < hs.value_qbuffer.rows(); ++i) append_row(out, at, hs.value_qbuffer.row(i));
  for (std::size_t i = 0; i < hs.value_local.rows(); ++i) append_row(out, at, hs.value_local.row(i));
  return out;
}

}  // namespace

KittyCache::KittyCache(KittyConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  heads_.reserve(cfg_.h_kv);
  for (std::size_t h = 0; h < cfg_.h_kv; ++h) {
    heads_.push_back(HeadState{RowStore(cfg_.d), RowStore(cfg_.d), {}, RowStore(cfg_.d), RowRing(cfg_.r, cfg_.d),
                               RowStore(cfg_.d), {}, 0, 0});
  }
}

KeyPage KittyCache::make_key_page(const HeadMatrix& block, std::size_t kv_head, std::size_t ordinal) const {
  if (cfg_.key_bits == kPassThroughBits) return block;
  BoostHeuristic heuristic = cfg_.heuristic;
  if (heuristic.kind == BoostHeuristic::Kind::kRandom) heuristic.seed = mix_seed(heuristic.seed, kv_head, ordinal);
  // Boost channels are chosen from this page's own tokens.
  const BoostSelection sel = select_boost(channel_scores(block), cfg_.boost_fraction, heuristic);
  return pack_key_page(block, sel);
}

ValuePage KittyCache::make_value_page(const HeadMatrix& block) const {
  if (cfg_.value_bits == kPassThroughBits) return block;
  return pack_value_page(block);
}

void KittyCache::prefill(std::span<const HeadMatrix> keys, std::span<const HeadMatrix> values) {
  require(total_tokens_ == 0, ErrorCode::kStateNotEmpty, "prefill requires an empty cache");
  require(keys.size() == cfg_.h_kv && values.size() == cfg_.h_kv, ErrorCode::kShapeMismatch,
          "prefill needs one matrix per KV head");
  const std::size_t p = keys[0].rows();
  for (std::size_t h = 0; h < cfg_.h_kv; ++h) {
    require(keys[h].rows() == p && values[h].rows() == p, ErrorCode::kShapeMismatch, "prefill token counts differ");
    require(keys[h].cols() == cfg_.d && values[h].cols() == cfg_.d, ErrorCode::kShapeMismatch,
            "prefill head size mismatch");
  }

  const std::size_t sink = std::min(cfg_.s, p);
  const std::size_t rest = p - sink;
  const std::size_t key_pages = rest / cfg_.g;
  const std::size_t local = std::min(cfg_.r, rest);
  const std::size_t overflow = rest - local;
  const std::size_t value_pages = overflow / cfg_.g;

  for (std::size_t h = 0; h < cfg_.h_kv; ++h) {
    HeadState& hs = heads_[h];
    const HeadMatrix& k = keys[h];
    const HeadMatrix& v = values[h];
    for (std::size_t t = 0; t < sink; ++t) {
      hs.key_sink.push(k.row(t));
      hs.value_sink.push(v.row(t));
    }

    hs.key_pages.resize(key_pages);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(key_pages); ++i)
      hs.key_pages[i] = make_key_page(k.slice_rows(sink + i * cfg_.g, cfg_.g), h, i);
    hs.key_pack_events += key_pages;
    for (std::size_t t = sink + key_pages * cfg_.g; t < p; ++t) hs.key_qbuffer.push(k.row(t));

    hs.value_pages.resize(value_pages);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(value_pages); ++i)
      hs.value_pages[i] = make_value_page(v.slice_rows(sink + i * cfg_.g, cfg_.g));
    hs.value_pack_events += value_pages;
    for (std::size_t t = sink + value_pages * cfg_.g; t < sink + overflow; ++t) hs.value_qbuffer.push(v.row(t));
    for (std::size_t t = sink + overflow; t < p; ++t) hs.value_local.push(v.row(t));
  }
  total_tokens_ = p;
}

void KittyCache::append_token(const HeadMatrix& k_new, const HeadMatrix& v_new) {
  require(k_new.rows() == cfg_.h_kv && v_new.rows() == cfg_.h_kv && k_new.cols() == cfg_.d &&
              v_new.cols() == cfg_.d,
          ErrorCode::kShapeMismatch, "new K/V must be h_kv x d");
  const bool to_sink = total_tokens_ < cfg_.s;
  for (std::size_t h = 0; h < cfg_.h_kv; ++h) {
    HeadState& hs = heads_[h];
    if (to_sink) {
      hs.key_sink.push(k_new.row(h));
      hs.value_sink.push(v_new.row(h));
      continue;
    }
    hs.key_qbuffer.push(k_new.row(h));
    if (auto evicted = hs.value_local.push(v_new.row(h))) hs.value_qbuffer.push(*evicted);
  }
  ++total_tokens_;
}

PackEvents KittyCache::maybe_pack() {
  PackEvents events;
  for (std::size_t h = 0; h < cfg_.h_kv; ++h) {
    HeadState& hs = heads_[h];
    if (hs.key_qbuffer.rows() == cfg_.g) {
      hs.key_pages.push_back(make_key_page(hs.key_qbuffer.to_matrix(), h, hs.key_pages.size()));
      hs.key_qbuffer.clear();
      ++hs.key_pack_events;
      ++events.key;
    }
    if (hs.value_qbuffer.rows() == cfg_.g) {
      hs.value_pages.push_back(make_value_page(hs.value_qbuffer.to_matrix()));
      hs.value_qbuffer.clear();
      ++hs.value_pack_events;
      ++events.value;
    }
  }
  return events;
}

void KittyCache::insert_token(const HeadMatrix& k_new, const HeadMatrix& v_new) {
  append_token(k_new, v_new);
  maybe_pack();
}

AttentionOutput KittyCache::decode_step(const HeadMatrix& k_new, const HeadMatrix& v_new,
                                        const HeadMatrix& queries, bool with_probabilities) {
  append_token(k_new, v_new);
  AttentionOutput out = attend(queries, with_probabilities);
  maybe_pack();
  return out;
}

AttentionOutput KittyCache::attend(const HeadMatrix& queries, bool with_probabilities) const {
  require(total_tokens_ > 0, ErrorCode::kEmptyCache, "attention over an empty cache");
  require(queries.rows() == cfg_.h_q && queries.cols() == cfg_.d, ErrorCode::kShapeMismatch,
          "queries must be h_q x d");
  const std::size_t d = cfg_.d;
  const std::size_t total = total_tokens_;

  // Reconstruct each page once per KV head; all query heads in the group share it.
  std::vector<std::vector<HeadMatrix>> key_pages(cfg_.h_kv);
  std::vector<std::vector<HeadMatrix>> value_pages(cfg_.h_kv);
  for (std::size_t h = 0; h < cfg_.h_kv; ++h) {
    key_pages[h] = dequantize_pages(heads_[h].key_pages);
    value_pages[h] = dequantize_pages(heads_[h].value_pages);
  }

  AttentionOutput result{HeadMatrix(cfg_.h_q, d), std::nullopt};
  if (with_probabilities) result.probabilities.emplace(cfg_.h_q, total);
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t qi = 0; qi < static_cast<std::ptrdiff_t>(cfg_.h_q); ++qi) {
    const auto qh = static_cast<std::size_t>(qi);
    const std::size_t kvh = cfg_.kv_head_of(qh);
    const HeadState& hs = heads_[kvh];
    const auto q = queries.row(qh);

    std::vector<float> p;
    p.reserve(total);
    auto logit = [&](std::span<const float> k) {
      float acc = 0.0f;
      for (std::size_t c = 0; c < d; ++c) acc += q[c] * k[c];
      p.push_back(acc * inv_sqrt_d);
    };
    for (std::size_t i = 0; i < hs.key_sink.rows(); ++i) logit(hs.key_sink.row(i));
    for (const HeadMatrix& page : key_pages[kvh])
      for (std::size_t t = 0; t < page.rows(); ++t) logit(page.row(t));
    for (std::size_t i = 0; i < hs.key_qbuffer.rows(); ++i) logit(hs.key_qbuffer.row(i));

    stable_softmax(p);

    auto out = result.outputs.row(qh);
    std::size_t t = 0;
    auto accumulate = [&](std::span<const float> v) {
      const float w = p[t++];
      for (std::size_t c = 0; c < d; ++c) out[c] += w * v[c];
    };
    for (std::size_t i = 0; i < hs.value_sink.rows(); ++i) accumulate(hs.value_sink.row(i));
    for (const HeadMatrix& page : value_pages[kvh])
      for (std::size_t r = 0; r < page.rows(); ++r) accumulate(page.row(r));
    for (std::size_t i = 0; i < hs.value_qbuffer.rows(); ++i) accumulate(hs.value_qbuffer.row(i));
    for (std::size_t i = 0; i < hs.value_local.rows(); ++i) accumulate(hs.value_local.row(i));

    if (with_probabilities) std::copy(p.begin(), p.end(), result.probabilities->row(qh).begin());
  }
  return result;
}

std::vector<HeadMatrix> KittyCache::materialize_keys() const {
  std::vector<HeadMatrix> out;
  for (const HeadState& hs : heads_) out.push_back(flatten_keys(hs, total_tokens_, cfg_.d));
  return out;
}

std::vector<HeadMatrix> KittyCache::materialize_values() const {
  std::vector<HeadMatrix> out;
  for (const HeadState& hs : heads_) out.push_back(flatten_values(hs, total_tokens_, cfg_.d));
  return out;
}

void KittyCache::check_invariants() const {
  const std::size_t past_sink = total_tokens_ > cfg_.s ? total_tokens_ - cfg_.s : 0;
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    const HeadState& hs = heads_[h];
    const std::string where = "head " + std::to_string(h) + ": ";
    require(hs.key_tokens(cfg_.g) == total_tokens_, ErrorCode::kInvalidArgument, where + "key token count drifted");
    require(hs.value_tokens(cfg_.g) == total_tokens_, ErrorCode::kInvalidArgument,
            where + "value token count drifted");
    require(hs.key_qbuffer.rows() < cfg_.g && hs.value_qbuffer.rows() < cfg_.g, ErrorCode::kInvalidArgument,
            where + "Q-Buffer left full");
    require(hs.value_local.rows() == std::min(cfg_.r, past_sink), ErrorCode::kInvalidArgument,
            where + "local window size wrong");
    require(hs.key_sink.rows() == std::min(cfg_.s, total_tokens_), ErrorCode::kInvalidArgument,
            where + "sink size wrong");
  }
}

}  // namespace kitty
