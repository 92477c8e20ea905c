#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "kitty/quant.h"

namespace kitty {

// Shape and policy of one Kitty cache. Defaults follow the reference
// configuration: 32 sink tokens, 128-token local window, 128-token pages.
struct KittyConfig {
  std::size_t s = 32;    // sink tokens kept unquantized (keys and values)
  std::size_t r = 128;   // value local window
  std::size_t g = 128;   // page / quantization group size in tokens
  std::size_t d = 128;   // head size
  std::size_t h_kv = 1;  // KV heads
  std::size_t h_q = 4;   // query heads
  int key_bits = 2;      // 2 or 16 (pass-through)
  int value_bits = 2;    // 2 or 16 (pass-through)
  double boost_fraction = 0.125;
  BoostHeuristic heuristic{};

  void validate() const;
  std::size_t d_boost() const { return boost_count(boost_fraction, d); }
  // Query head -> KV head under grouped-query attention.
  std::size_t kv_head_of(std::size_t q_head) const { return q_head * h_kv / h_q; }

  static KittyConfig passthrough();
};

// Flat `key = value` lines using the field names above; `heuristic` is
// `magnitude` or `random`, with `seed` for the latter. `#` starts a comment.
KittyConfig parse_config(const std::string& text, KittyConfig base = {});
KittyConfig load_config(const std::filesystem::path& path, KittyConfig base = {});
// Applies one `key = value` assignment; unknown keys are rejected.
void set_config_field(KittyConfig& cfg, const std::string& key, const std::string& value);
std::string format_config(const KittyConfig& cfg);

}  // namespace kitty
