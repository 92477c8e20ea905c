#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kitty/analysis.h"
#include "kitty/cache.h"
#include "kitty/page_codec.h"
#include "kitty/rng.h"
#include "oracles.h"

namespace {

using namespace kitty;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

HeadMatrix random_queries(const KittyConfig& cfg, std::uint64_t seed) {
  return generate_synthetic({cfg.h_q, cfg.d, {}, 1.0f, 1.0f, seed});
}

// 1. Packed pages reproduce per-lane fake quantization bit for bit.
Outcome pack_bit_exact() {
  Rng rng(1001);
  std::size_t key_pages = 0, value_pages = 0, bad = 0;
  const std::size_t ds[] = {8, 64, 128};
  const std::size_t gs[] = {4, 32, 128};
  const double fs[] = {0.0, 0.125, 0.25, 1.0};
  for (int rep = 0; rep < 28; ++rep)
    for (std::size_t d : ds)
      for (std::size_t g : gs)
        for (double f : fs) {
          std::vector<std::size_t> outliers;
          if (rng.next_u64() & 1) outliers.push_back(rng.next_u64() % d);
          const float gain = 1.0f + 15.0f * static_cast<float>(rng.uniform());
          const HeadMatrix x = generate_synthetic({g, d, outliers, gain, 1.0f, rng.next_u64()});
          const BoostSelection sel = select_boost(channel_scores(x), f, BoostHeuristic::magnitude());
          const HeadMatrix packed = dequantize_key_page(pack_key_page(x, sel)).transposed();
          const HeadMatrix oracle =
              testing::lane_loop_fake_quant(x, QuantAxis::kPerChannel, lane_bits(sel, d));
          bad += !bit_equal(packed, oracle);
          ++key_pages;
          const HeadMatrix v = dequantize_value_page(pack_value_page(x));
          bad += !bit_equal(v, testing::lane_loop_fake_quant(x, QuantAxis::kPerToken, std::vector<int>(g, 2)));
          ++value_pages;
        }
  return {bad == 0 && key_pages >= 1000, std::to_string(key_pages) + " key + " + std::to_string(value_pages) +
                                             " value pages, " + std::to_string(bad) + " mismatches"};
}

float ulp(float x) {
  x = std::fabs(x);
  return std::nextafter(x, std::numeric_limits<float>::infinity()) - x;
}

// 2. |x - x_hat| <= scale/2 + 4 ulp, and 4-bit error never exceeds 2-bit error beyond the same ulp slack.
Outcome error_bound() {
  Rng rng(2002);
  std::size_t lanes = 0, bound_violations = 0, order_violations = 0, ulp_ties = 0;
  double worst = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const std::size_t n = 1 + rng.next_u64() % 256;
    const double spread = std::pow(10.0, -3.0 + 6.0 * rng.uniform());
    const double offset = (rng.uniform() - 0.5) * 100.0 * spread;
    std::vector<float> lane(n);
    const int shape = static_cast<int>(rng.next_u64() % 4);
    for (float& x : lane) {
      double v = shape == 0 ? rng.gaussian() : shape == 1 ? rng.uniform() : rng.gaussian() * (rng.uniform() < 0.05 ? 20 : 1);
      if (shape == 3) v = std::round(v * 4.0) / 4.0;
      x = static_cast<float>(offset + spread * v);
    }
    double max_err[2] = {0.0, 0.0};
    double ulp_slack = 0.0;
    for (int b = 0; b < 2; ++b) {
      const int bits = b == 0 ? 2 : 4;
      const QuantizedLane q = quantize_values(lane, bits);
      const std::vector<float> y = dequantize_values(q.codes, q.params);
      const float mag = std::max({std::fabs(q.params.zero_point), std::fabs(q.params.zero_point + q.params.scale * q.params.max_code())});
      const double slack = q.params.scale / 2.0 + 4.0 * ulp(mag);
      ulp_slack = std::max(ulp_slack, 4.0 * ulp(mag));
      for (std::size_t t = 0; t < n; ++t) {
        const double err = std::fabs(static_cast<double>(lane[t]) - y[t]);
        max_err[b] = std::max(max_err[b], err);
        if (err > slack) ++bound_violations;
        if (q.params.scale > 0) worst = std::max(worst, err / slack);
      }
    }
    if (max_err[1] > max_err[0] + ulp_slack) ++order_violations;
    if (max_err[1] > max_err[0]) ++ulp_ties;
    ++lanes;
  }
  return {bound_violations == 0 && order_violations == 0,
          std::to_string(lanes) + " lanes x {2,4} bits, bound violations " + std::to_string(bound_violations) +
              ", 4-bit > 2-bit + 4 ulp in " + std::to_string(order_violations) + " lanes (" +
              std::to_string(ulp_ties) + " within ulp slack), worst err/bound " +
              fmt("%.3f", worst)};
}

// 3. Pass-through cache equals dense attention at every step, around every buffer boundary.
Outcome passthrough_equivalence() {
  KittyConfig cfg = KittyConfig::passthrough();
  const std::size_t s = cfg.s, g = cfg.g, r = cfg.r;
  const std::vector<std::size_t> lengths{s, s + 1, s + g, s + g + 1, s + g + r, s + 2 * g + r + 3};
  const std::size_t max_len = lengths.back();
  const testing::History hist = testing::make_history(cfg, max_len + 2 * g, 3003, {3, 17, 29, 41, 60, 77, 95, 110});
  const HeadMatrix queries = generate_synthetic({max_len + 2 * g, cfg.h_q * cfg.d, {}, 1.0f, 1.0f, 3004});
  auto query = [&](std::size_t step) {
    return HeadMatrix(cfg.h_q, cfg.d, std::vector<float>(queries.row(step).begin(), queries.row(step).end()));
  };
  double worst = 0.0;
  std::size_t checks = 0;

  // Token-by-token decode from an empty cache through the longest length.
  KittyCache cache(cfg);
  for (std::size_t t = 0; t < max_len; ++t) {
    const HeadMatrix q = query(t);
    const auto out = cache.decode_step(testing::token_rows(hist.keys, t), testing::token_rows(hist.values, t), q);
    worst = std::max(worst, max_relative_deviation(out.outputs, oracle_attend(hist.keys, hist.values, q, false, t + 1).outputs));
    ++checks;
  }
  // Prefill to each boundary length, then decode across the next page boundary.
  for (std::size_t len : lengths) {
    KittyCache c(cfg);
    std::vector<HeadMatrix> pk{hist.keys[0].slice_rows(0, len)}, pv{hist.values[0].slice_rows(0, len)};
    c.prefill(pk, pv);
    worst = std::max(worst, max_relative_deviation(c.attend(query(len)).outputs,
                                                   oracle_attend(hist.keys, hist.values, query(len), false, len).outputs));
    for (std::size_t t = len; t < len + g + 1; ++t) {
      const auto out = c.decode_step(testing::token_rows(hist.keys, t), testing::token_rows(hist.values, t), query(t));
      worst = std::max(worst, max_relative_deviation(out.outputs,
                                                     oracle_attend(hist.keys, hist.values, query(t), false, t + 1).outputs));
    }
    checks += g + 2;
  }
  return {worst <= 1e-5, std::to_string(checks) + " steps, L in {32,33,160,161,288,419}, max rel dev " +
                             fmt("%.3g", worst) + " (tol 1e-5)"};
}

// 4. Quantized cache equals dense attention over the segment-matched fake-quantized history.
Outcome quantized_equivalence() {
  const KittyConfig cfg;
  const std::size_t len = 2048;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const testing::History hist = testing::make_history(cfg, len, 4000 + seed, {3, 17, 29, 41, 60, 77, 95, 110});
    KittyCache cache(cfg);
    const std::size_t prompt = 1500 + seed * 7;
    std::vector<HeadMatrix> pk{hist.keys[0].slice_rows(0, prompt)}, pv{hist.values[0].slice_rows(0, prompt)};
    cache.prefill(pk, pv);
    for (std::size_t t = prompt; t < len; ++t)
      cache.insert_token(testing::token_rows(hist.keys, t), testing::token_rows(hist.values, t));
    for (int qi = 0; qi < 4; ++qi) {
      const HeadMatrix q = random_queries(cfg, seed * 100 + qi);
      worst = std::max(worst, max_relative_deviation(cache.attend(q).outputs,
                                                     testing::matched_oracle_attend(cfg, hist, len, q).outputs));
    }
  }
  return {worst <= 1e-5, "20 seeds x 4 queries at L=2048, max rel dev " + fmt("%.3g", worst) + " (tol 1e-5)"};
}

// 5. Pack events over N = 10G decode steps stay within ceil(N/G) + 1.
Outcome amortization() {
  KittyConfig cfg;
  cfg.h_kv = 2;
  const std::size_t n = 10 * cfg.g;
  const std::size_t bound = (n + cfg.g - 1) / cfg.g + 1;
  std::size_t worst_key = 0, worst_value = 0;
  for (std::size_t prompt : {0u, 1u, 31u, 100u, 159u, 160u, 287u, 288u, 1000u}) {
    const testing::History hist = testing::make_history(cfg, prompt + n, 5000 + prompt);
    KittyCache cache(cfg);
    if (prompt > 0) {
      std::vector<HeadMatrix> pk, pv;
      for (std::size_t h = 0; h < cfg.h_kv; ++h) {
        pk.push_back(hist.keys[h].slice_rows(0, prompt));
        pv.push_back(hist.values[h].slice_rows(0, prompt));
      }
      cache.prefill(pk, pv);
    }
    std::vector<std::size_t> k0, v0;
    for (std::size_t h = 0; h < cfg.h_kv; ++h) {
      k0.push_back(cache.head(h).key_pack_events);
      v0.push_back(cache.head(h).value_pack_events);
    }
    const HeadMatrix q = random_queries(cfg, 5001);
    for (std::size_t t = prompt; t < prompt + n; ++t)
      cache.decode_step(testing::token_rows(hist.keys, t), testing::token_rows(hist.values, t), q);
    for (std::size_t h = 0; h < cfg.h_kv; ++h) {
      worst_key = std::max(worst_key, cache.head(h).key_pack_events - k0[h]);
      worst_value = std::max(worst_value, cache.head(h).value_pack_events - v0[h]);
    }
  }
  return {worst_key <= bound && worst_value <= bound,
          "N=" + std::to_string(n) + ", max key events " + std::to_string(worst_key) + ", max value events " +
              std::to_string(worst_value) + ", bound " + std::to_string(bound)};
}

// 6. Compression ratio at L = 8192 in [6, 8], closed form equal to the measured state.
Outcome memory_claim() {
  const KittyConfig cfg;
  const std::size_t len = 8192;
  const MemoryReport closed = memory_report(cfg, len);
  const testing::History hist = testing::make_history(cfg, len, 6006);
  KittyCache cache(cfg);
  cache.prefill(hist.keys, hist.values);
  const bool measured_match = measure_memory(cache) == closed && measure_memory(cache, false) == memory_report(cfg, len, false);
  const double ratio = closed.ratio();
  std::ostringstream trend;
  KittyConfig zero = cfg;
  zero.boost_fraction = 0.0;
  trend << "; boost 0, no metadata: L=8192 " << fmt("%.3f", memory_report(zero, len, false).ratio()) << ", L=2^20 "
        << fmt("%.3f", memory_report(zero, 1u << 20, false).ratio());
  return {ratio >= 6.0 && ratio <= 8.0 && measured_match,
          "ratio " + fmt("%.4f", ratio) + " (" + std::to_string(closed.baseline) + " / " + std::to_string(closed.total()) +
              " bytes), closed form " + (measured_match ? "==" : "!=") + " measured" + trend.str()};
}

// 7. Top-k channels by sensitivity recover the injected outlier channels.
Outcome sensitivity_recovery() {
  const std::size_t d = 128, tokens = 1024, q_heads = 4, q_tokens = 16;
  std::ostringstream detail;
  bool pass = true;
  for (std::size_t k : {2u, 8u, 16u}) {
    double recovered = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(mix_seed(7007, k, seed));
      std::set<std::size_t> injected;
      while (injected.size() < k) injected.insert(rng.next_u64() % d);
      const std::vector<HeadMatrix> keys{generate_synthetic(
          {tokens, d, std::vector<std::size_t>(injected.begin(), injected.end()), 8.0f, 1.0f, rng.next_u64()})};
      std::vector<HeadMatrix> queries;
      for (std::size_t h = 0; h < q_heads; ++h)
        queries.push_back(generate_synthetic({q_tokens, d, {}, 1.0f, 1.0f, rng.next_u64()}));
      const SensitivityReport report = channel_sensitivity(queries, keys, 2);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < k; ++i) hits += injected.count(report.mean_ranking[i]);
      recovered += static_cast<double>(hits) / static_cast<double>(k) / 10.0;
    }
    pass = pass && recovered >= 0.9;
    detail << "k=" << k << " " << fmt("%.1f%%", 100.0 * recovered) << (k == 16 ? "" : ", ");
  }
  return {pass, detail.str() + " (need >= 90%)"};
}

// 8. Magnitude-guided boost: MSE non-increasing in fraction and no worse than random at 12.5% and 25%.
Outcome sweep_ordering() {
  const std::size_t seeds = 20, d = 128, tokens = 1024;
  const std::vector<std::size_t> outliers{3, 17, 29, 41, 60, 77, 95, 110};
  SweepOptions opts;
  opts.random_seeds = 1;
  std::vector<std::vector<SweepRow>> runs;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    const std::uint64_t data_seed = mix_seed(8008, s);
    const std::vector<HeadMatrix> keys{generate_synthetic({tokens, d, outliers, 8.0f, 1.0f, mix_seed(data_seed, 0, 1)})};
    std::vector<HeadMatrix> queries;
    for (std::size_t h = 0; h < 4; ++h) queries.push_back(generate_synthetic({16, d, {}, 1.0f, 1.0f, mix_seed(data_seed, h, 2)}));
    opts.seed = mix_seed(data_seed, 3);
    runs.push_back(boost_sweep(queries, keys, opts));
  }
  const auto rows = aggregate_sweeps(runs);
  std::vector<double> magnitude;
  std::vector<std::pair<double, double>> vs_random;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].heuristic != "magnitude") continue;
    magnitude.push_back(rows[i].mean_mse);
    if (rows[i].fraction == 0.125 || rows[i].fraction == 0.25) vs_random.emplace_back(rows[i].mean_mse, rows[i + 1].mean_mse);
  }
  bool monotone = true;
  for (std::size_t i = 1; i < magnitude.size(); ++i) monotone = monotone && magnitude[i] <= magnitude[i - 1];
  bool beats = vs_random.size() == 2;
  for (const auto& [m, r] : vs_random) beats = beats && m <= r;
  std::ostringstream detail;
  detail << seeds << " seeds, magnitude MSE";
  for (double m : magnitude) detail << " " << fmt("%.3g", m);
  detail << (monotone ? " (non-increasing)" : " (NOT monotone)") << "; random at 0.125/0.25: "
         << fmt("%.3g", vs_random[0].second) << "/" << fmt("%.3g", vs_random[1].second);
  return {monotone && beats, detail.str()};
}

// 9. Sentinel rows (row t filled with t) come back in insertion order through every buffer and page.
Outcome order_fuzz() {
  Rng rng(9009);
  std::size_t failures = 0, invariant_breaks = 0, tokens_seen = 0;
  const int trials = 10000;
  for (int trial = 0; trial < trials; ++trial) {
    KittyConfig cfg;
    cfg.s = rng.next_u64() % 9;
    cfg.r = 1 + rng.next_u64() % 12;
    cfg.d = 4 * (1 + rng.next_u64() % 2);
    cfg.h_kv = 1 + rng.next_u64() % 2;
    cfg.h_q = cfg.h_kv;
    const int mode = static_cast<int>(rng.next_u64() % 3);
    // With 2^bits consecutive integers per key column the quantizer is exact.
    if (mode == 0) {
      cfg.g = 4;
      cfg.boost_fraction = 0.0;
    } else if (mode == 1) {
      cfg.g = 16;
      cfg.boost_fraction = 1.0;
    } else {
      cfg.g = 4 * (1 + rng.next_u64() % 4);
      cfg.key_bits = cfg.value_bits = kPassThroughBits;
    }
    const std::size_t total = 1 + rng.next_u64() % 70;
    tokens_seen += total;
    auto sentinel = [&](std::size_t t) {
      HeadMatrix m(cfg.h_kv, cfg.d);
      for (std::size_t h = 0; h < cfg.h_kv; ++h)
        for (std::size_t c = 0; c < cfg.d; ++c) m(h, c) = static_cast<float>(t) + 1000.0f * static_cast<float>(h);
      return m;
    };
    KittyCache cache(cfg);
    std::size_t t = 0;
    if (rng.next_u64() & 1) {
      const std::size_t prompt = rng.next_u64() % (total + 1);
      std::vector<HeadMatrix> pk;
      for (std::size_t h = 0; h < cfg.h_kv; ++h) {
        HeadMatrix m(prompt, cfg.d);
        for (std::size_t i = 0; i < prompt; ++i)
          for (std::size_t c = 0; c < cfg.d; ++c) m(i, c) = static_cast<float>(i) + 1000.0f * static_cast<float>(h);
        pk.push_back(std::move(m));
      }
      cache.prefill(pk, pk);
      t = prompt;
    }
    try {
      cache.check_invariants();
      for (; t < total; ++t) {
        const HeadMatrix row = sentinel(t);
        if (rng.next_u64() & 1)
          cache.insert_token(row, row);
        else
          cache.decode_step(row, row, HeadMatrix(cfg.h_q, cfg.d));
        cache.check_invariants();
      }
    } catch (const Error&) {
      ++invariant_breaks;
      continue;
    }
    const auto keys = cache.materialize_keys();
    const auto values = cache.materialize_values();
    bool ok = cache.total_tokens() == total;
    for (std::size_t h = 0; h < cfg.h_kv && ok; ++h)
      for (std::size_t i = 0; i < total && ok; ++i)
        for (std::size_t c = 0; c < cfg.d; ++c) {
          const float want = static_cast<float>(i) + 1000.0f * static_cast<float>(h);
          if (keys[h](i, c) != want || values[h](i, c) != want) {
            ok = false;
            break;
          }
        }
    failures += !ok;
  }
  return {failures == 0 && invariant_breaks == 0,
          std::to_string(trials) + " interleavings, " + std::to_string(tokens_seen) + " tokens, order errors " +
              std::to_string(failures) + ", invariant violations " + std::to_string(invariant_breaks)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "pack/dequantize bit-exactness", pack_bit_exact},
      {2, "quantization error bound", error_bound},
      {3, "pass-through pipeline equivalence", passthrough_equivalence},
      {4, "quantized pipeline equivalence", quantized_equivalence},
      {5, "pack amortization bound", amortization},
      {6, "memory compression ratio", memory_claim},
      {7, "sensitivity recovery", sensitivity_recovery},
      {8, "boost sweep ordering", sweep_ordering},
      {9, "order/conservation fuzz", order_fuzz},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
