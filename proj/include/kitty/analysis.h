#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "kitty/cache.h"
#include "kitty/config.h"
#include "kitty/head_matrix.h"

namespace kitty {

// Attention probabilities softmax(Q K^T / sqrt(d)) in double precision,
// returned row-major (queries x tokens).
std::vector<double> attention_probabilities(const HeadMatrix& queries, const HeadMatrix& keys);

double mean_squared_error(std::span<const double> a, std::span<const double> b);

struct SensitivityReport {
  // mse[h][c]: MSE between baseline and channel-c-perturbed probabilities for query head h.
  std::vector<std::vector<double>> mse;
  std::vector<double> mean_mse;                  // per channel, averaged over query heads
  std::vector<std::vector<std::size_t>> ranking;  // per query head, most sensitive first
  std::vector<std::size_t> mean_ranking;          // by mean_mse, most sensitive first
};

// Quantizes one channel of K at a time (per-channel over all tokens, at
// `bits` in {2, 4, 16}) and measures the change in attention probabilities
// for every query head. queries: one Lq x d matrix per query head; keys:
// one L x d matrix per KV head.
SensitivityReport channel_sensitivity(std::span<const HeadMatrix> queries, std::span<const HeadMatrix> keys,
                                      int bits = 2);

struct SweepOptions {
  std::vector<double> fractions = {0.0, 0.125, 0.25, 0.5, 1.0};
  bool magnitude = true;
  std::size_t random_seeds = 0;  // 0 disables the random heuristic
  std::uint64_t seed = 0;
};

struct SweepRow {
  double fraction = 0.0;
  std::string heuristic;           // "magnitude" or "random"
  double mean_mse = 0.0;           // over query heads and seeds
  double max_deviation = 0.0;      // largest |seed mean - mean|
  std::vector<double> head_mse;    // per query head, averaged over seeds
};

// Fake-quantizes K per channel with 4 bits on the selected channels and 2
// bits elsewhere, then reports the attention-probability MSE against the
// unquantized baseline. Rows are ordered by fraction, magnitude first.
std::vector<SweepRow> boost_sweep(std::span<const HeadMatrix> queries, std::span<const HeadMatrix> keys,
                                  const SweepOptions& options);

// Combines sweeps run on independent data sets (same options): means are
// averaged and max_deviation is the largest |run mean - overall mean|.
std::vector<SweepRow> aggregate_sweeps(const std::vector<std::vector<SweepRow>>& runs);

// Byte accounting for one cache; FP rows count 2 bytes per element.
struct MemoryReport {
  std::size_t tokens = 0;
  std::size_t key_sink = 0;
  std::size_t value_sink = 0;
  std::size_t key_qbuffer = 0;
  std::size_t value_qbuffer = 0;
  std::size_t value_local = 0;
  std::size_t key_pages = 0;  // page counts, summed over KV heads
  std::size_t value_pages = 0;
  std::size_t key_page_bytes = 0;
  std::size_t value_page_bytes = 0;
  std::size_t baseline = 0;  // 2 (K,V) * 2 bytes * tokens * d * h_kv

  std::size_t total() const {
    return key_sink + value_sink + key_qbuffer + value_qbuffer + value_local + key_page_bytes + value_page_bytes;
  }
  double ratio() const { return total() ? static_cast<double>(baseline) / static_cast<double>(total()) : 0.0; }

  friend bool operator==(const MemoryReport&, const MemoryReport&) = default;
};

// Closed form for a cache holding `tokens` tokens. Without metadata only the
// packed codes and FP rows are counted (no scales, zero points or boost_idx).
MemoryReport memory_report(const KittyConfig& cfg, std::size_t tokens, bool include_metadata = true);
// Measured from the buffers and pages actually held by `cache`.
MemoryReport measure_memory(const KittyCache& cache, bool include_metadata = true);

void write_sensitivity_csv(std::ostream& out, const SensitivityReport& report);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);
void write_memory_csv(std::ostream& out, const MemoryReport& report);
// `key: value` lines.
void write_memory_summary(std::ostream& out, const MemoryReport& report);

}  // namespace kitty
