#include "kitty/analysis.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "kitty/quant.h"
#include "kitty/rng.h"

namespace kitty {

namespace {

void check_heads(std::span<const HeadMatrix> queries, std::span<const HeadMatrix> keys) {
  require(!keys.empty() && !queries.empty(), ErrorCode::kEmptyInput, "need at least one query and one KV head");
  require(queries.size() % keys.size() == 0, ErrorCode::kShapeMismatch,
          "query heads must be a multiple of KV heads");
  const std::size_t d = keys[0].cols();
  for (const HeadMatrix& k : keys)
    require(k.cols() == d && k.rows() == keys[0].rows() && k.rows() > 0, ErrorCode::kShapeMismatch,
            "KV heads must share shape");
  for (const HeadMatrix& q : queries)
    require(q.cols() == d && q.rows() > 0, ErrorCode::kShapeMismatch, "query head size mismatch");
}

void softmax_rows(std::vector<double>& logits, std::size_t cols) {
  for (std::size_t off = 0; off < logits.size(); off += cols) {
    double* row = logits.data() + off;
    const double peak = *std::max_element(row, row + cols);
    double sum = 0.0;
    for (std::size_t t = 0; t < cols; ++t) sum += (row[t] = std::exp(row[t] - peak));
    for (std::size_t t = 0; t < cols; ++t) row[t] /= sum;
  }
}

std::vector<double> attention_logits(const HeadMatrix& queries, const HeadMatrix& keys) {
  const std::size_t lq = queries.rows();
  const std::size_t l = keys.rows();
  const std::size_t d = keys.cols();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> logits(lq * l);
  for (std::size_t a = 0; a < lq; ++a)
    for (std::size_t t = 0; t < l; ++t) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += static_cast<double>(queries(a, c)) * keys(t, c);
      logits[a * l + t] = acc * inv_sqrt_d;
    }
  return logits;
}

std::vector<std::size_t> rank_descending(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return order;
}

}  // namespace

std::vector<double> attention_probabilities(const HeadMatrix& queries, const HeadMatrix& keys) {
  require(queries.cols() == keys.cols(), ErrorCode::kShapeMismatch, "query/key head size mismatch");
  std::vector<double> p = attention_logits(queries, keys);
  if (keys.rows() > 0) softmax_rows(p, keys.rows());
  return p;
}

double mean_squared_error(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && !a.empty(), ErrorCode::kShapeMismatch, "MSE over mismatched or empty inputs");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

SensitivityReport channel_sensitivity(std::span<const HeadMatrix> queries, std::span<const HeadMatrix> keys,
                                      int bits) {
  check_heads(queries, keys);
  require(bits == 2 || bits == 4 || bits == kPassThroughBits, ErrorCode::kInvalidArgument,
          "sensitivity width must be 2, 4 or 16");
  const std::size_t h_q = queries.size();
  const std::size_t h_kv = keys.size();
  const std::size_t d = keys[0].cols();
  const std::size_t l = keys[0].rows();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<std::vector<double>> base_logits(h_q);
  std::vector<std::vector<double>> base_probs(h_q);
  for (std::size_t h = 0; h < h_q; ++h) {
    base_logits[h] = attention_logits(queries[h], keys[h * h_kv / h_q]);
    base_probs[h] = base_logits[h];
    softmax_rows(base_probs[h], l);
  }

  SensitivityReport report;
  report.mse.assign(h_q, std::vector<double>(d, 0.0));
  // Quantizing channel c only moves each logit by q[c] * (k'[t][c] - k[t][c]) / sqrt(d).
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(d); ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    std::vector<std::vector<double>> delta(h_kv, std::vector<double>(l, 0.0));
    if (bits != kPassThroughBits) {
      for (std::size_t kvh = 0; kvh < h_kv; ++kvh) {
        const std::vector<float> column = keys[kvh].column(c);
        const QuantizedLane lane = quantize_values(column, bits);
        for (std::size_t t = 0; t < l; ++t)
          delta[kvh][t] = static_cast<double>(decode_value(lane.codes[t], lane.params)) - column[t];
      }
    }
    std::vector<double> perturbed;
    for (std::size_t h = 0; h < h_q; ++h) {
      const HeadMatrix& q = queries[h];
      const std::vector<double>& dk = delta[h * h_kv / h_q];
      perturbed = base_logits[h];
      for (std::size_t a = 0; a < q.rows(); ++a) {
        const double qc = static_cast<double>(q(a, c)) * inv_sqrt_d;
        for (std::size_t t = 0; t < l; ++t) perturbed[a * l + t] += qc * dk[t];
      }
      softmax_rows(perturbed, l);
      report.mse[h][c] = mean_squared_error(base_probs[h], perturbed);
    }
  }

  report.mean_mse.assign(d, 0.0);
  for (std::size_t h = 0; h < h_q; ++h) {
    for (std::size_t c = 0; c < d; ++c) report.mean_mse[c] += report.mse[h][c] / static_cast<double>(h_q);
    report.ranking.push_back(rank_descending(report.mse[h]));
  }
  report.mean_ranking = rank_descending(report.mean_mse);
  return report;
}

std::vector<SweepRow> boost_sweep(std::span<const HeadMatrix> queries, std::span<const HeadMatrix> keys,
                                  const SweepOptions& options) {
  check_heads(queries, keys);
  for (double f : options.fractions)
    require(f >= 0.0 && f <= 1.0, ErrorCode::kInvalidArgument, "sweep fractions must lie in [0, 1]");
  const std::size_t h_q = queries.size();
  const std::size_t h_kv = keys.size();
  const std::size_t d = keys[0].cols();

  std::vector<std::vector<double>> baseline(h_q);
  std::vector<ChannelScores> scores(h_kv);
  for (std::size_t h = 0; h < h_q; ++h) baseline[h] = attention_probabilities(queries[h], keys[h * h_kv / h_q]);
  for (std::size_t kvh = 0; kvh < h_kv; ++kvh) scores[kvh] = channel_scores(keys[kvh]);

  struct Job {
    std::size_t row;
    BoostHeuristic heuristic;
    double fraction;
  };
  std::vector<SweepRow> rows;
  std::vector<Job> jobs;
  for (double f : options.fractions) {
    if (options.magnitude) {
      jobs.push_back({rows.size(), BoostHeuristic::magnitude(), f});
      rows.push_back({f, "magnitude", 0.0, 0.0, {}});
    }
    if (options.random_seeds > 0) {
      for (std::size_t s = 0; s < options.random_seeds; ++s)
        jobs.push_back({rows.size(), BoostHeuristic::random(mix_seed(options.seed, s)), f});
      rows.push_back({f, "random", 0.0, 0.0, {}});
    }
  }

  // per job: MSE per query head
  std::vector<std::vector<double>> job_mse(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ji = 0; ji < static_cast<std::ptrdiff_t>(jobs.size()); ++ji) {
    const Job& job = jobs[ji];
    std::vector<HeadMatrix> quantized(h_kv);
    for (std::size_t kvh = 0; kvh < h_kv; ++kvh) {
      BoostHeuristic heuristic = job.heuristic;
      if (heuristic.kind == BoostHeuristic::Kind::kRandom) heuristic.seed = mix_seed(heuristic.seed, kvh);
      const BoostSelection sel = select_boost(scores[kvh], job.fraction, heuristic);
      quantized[kvh] = fake_quantize_matrix(keys[kvh], QuantAxis::kPerChannel, lane_bits(sel, d));
    }
    job_mse[ji].resize(h_q);
    for (std::size_t h = 0; h < h_q; ++h)
      job_mse[ji][h] = mean_squared_error(baseline[h], attention_probabilities(queries[h], quantized[h * h_kv / h_q]));
  }

  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<double> seed_means;
    SweepRow& row = rows[r];
    row.head_mse.assign(h_q, 0.0);
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].row != r) continue;
      double mean = 0.0;
      for (std::size_t h = 0; h < h_q; ++h) {
        row.head_mse[h] += job_mse[j][h];
        mean += job_mse[j][h] / static_cast<double>(h_q);
      }
      seed_means.push_back(mean);
    }
    const double n = static_cast<double>(seed_means.size());
    for (double& v : row.head_mse) v /= n;
    row.mean_mse = std::accumulate(seed_means.begin(), seed_means.end(), 0.0) / n;
    for (double m : seed_means) row.max_deviation = std::max(row.max_deviation, std::fabs(m - row.mean_mse));
  }
  return rows;
}

std::vector<SweepRow> aggregate_sweeps(const std::vector<std::vector<SweepRow>>& runs) {
  require(!runs.empty(), ErrorCode::kEmptyInput, "no sweeps to aggregate");
  std::vector<SweepRow> out = runs.front();
  const double n = static_cast<double>(runs.size());
  for (std::size_t r = 0; r < out.size(); ++r) {
    SweepRow& row = out[r];
    row.mean_mse = 0.0;
    row.max_deviation = 0.0;
    std::fill(row.head_mse.begin(), row.head_mse.end(), 0.0);
    for (const auto& run : runs) {
      require(run.size() == out.size() && run[r].fraction == row.fraction && run[r].heuristic == row.heuristic,
              ErrorCode::kShapeMismatch, "sweeps disagree on their rows");
      row.mean_mse += run[r].mean_mse / n;
      for (std::size_t h = 0; h < row.head_mse.size(); ++h) row.head_mse[h] += run[r].head_mse[h] / n;
    }
    for (const auto& run : runs) row.max_deviation = std::max(row.max_deviation, std::fabs(run[r].mean_mse - row.mean_mse));
  }
  return out;
}

MemoryReport memory_report(const KittyConfig& cfg, std::size_t tokens, bool include_metadata) {
  cfg.validate();
  const std::size_t meta = include_metadata ? 2 : 0;
  const std::size_t row_bytes = cfg.d * 2;
  const std::size_t sink = std::min(cfg.s, tokens);
  const std::size_t rest = tokens - sink;
  const std::size_t local = std::min(cfg.r, rest);
  const std::size_t overflow = rest - local;

  MemoryReport m;
  m.tokens = tokens;
  m.key_sink = m.value_sink = cfg.h_kv * sink * row_bytes;
  m.key_pages = cfg.h_kv * (rest / cfg.g);
  m.key_qbuffer = cfg.h_kv * (rest % cfg.g) * row_bytes;
  m.value_local = cfg.h_kv * local * row_bytes;
  m.value_pages = cfg.h_kv * (overflow / cfg.g);
  m.value_qbuffer = cfg.h_kv * (overflow % cfg.g) * row_bytes;
  PageBytes key_page = page_byte_size(PageKind::kKey, cfg, meta);
  if (!include_metadata) key_page.boost_idx = 0;
  m.key_page_bytes = m.key_pages * key_page.total();
  m.value_page_bytes = m.value_pages * page_byte_size(PageKind::kValue, cfg, meta).total();
  m.baseline = 2 * 2 * tokens * cfg.d * cfg.h_kv;
  return m;
}

MemoryReport measure_memory(const KittyCache& cache, bool include_metadata) {
  const KittyConfig& cfg = cache.config();
  const std::size_t meta = include_metadata ? 2 : 0;
  const std::size_t row_bytes = cfg.d * 2;
  MemoryReport m;
  m.tokens = cache.total_tokens();
  for (std::size_t h = 0; h < cfg.h_kv; ++h) {
    const HeadState& hs = cache.head(h);
    m.key_sink += hs.key_sink.rows() * row_bytes;
    m.value_sink += hs.value_sink.rows() * row_bytes;
    m.key_qbuffer += hs.key_qbuffer.rows() * row_bytes;
    m.value_qbuffer += hs.value_qbuffer.rows() * row_bytes;
    m.value_local += hs.value_local.rows() * row_bytes;
    m.key_pages += hs.key_pages.size();
    m.value_pages += hs.value_pages.size();
    for (const KeyPage& page : hs.key_pages) {
      if (const auto* q = std::get_if<QuantizedKeyPage>(&page))
        m.key_page_bytes += q->dense_low.size() + q->high_bits.size() +
                            (include_metadata ? q->boost_idx.size() : 0) +
                            (q->scales.size() + q->zero_points.size()) * meta;
      else
        m.key_page_bytes += std::get<HeadMatrix>(page).data().size() * 2;
    }
    for (const ValuePage& page : hs.value_pages) {
      if (const auto* q = std::get_if<QuantizedValuePage>(&page))
        m.value_page_bytes += q->codes.size() + (q->scales.size() + q->zero_points.size()) * meta;
      else
        m.value_page_bytes += std::get<HeadMatrix>(page).data().size() * 2;
    }
  }
  m.baseline = 2 * 2 * m.tokens * cfg.d * cfg.h_kv;
  return m;
}

void write_sensitivity_csv(std::ostream& out, const SensitivityReport& report) {
  out << "channel,mean_mse,mean_rank";
  for (std::size_t h = 0; h < report.mse.size(); ++h) out << ",head" << h << "_mse";
  out << '\n';
  std::vector<std::size_t> rank_of(report.mean_mse.size());
  for (std::size_t r = 0; r < report.mean_ranking.size(); ++r) rank_of[report.mean_ranking[r]] = r;
  out << std::setprecision(9);
  for (std::size_t c = 0; c < report.mean_mse.size(); ++c) {
    out << c << ',' << report.mean_mse[c] << ',' << rank_of[c];
    for (const auto& head : report.mse) out << ',' << head[c];
    out << '\n';
  }
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "fraction,heuristic,mean_mse,max_deviation";
  const std::size_t heads = rows.empty() ? 0 : rows.front().head_mse.size();
  for (std::size_t h = 0; h < heads; ++h) out << ",head" << h << "_mse";
  out << '\n' << std::setprecision(9);
  for (const SweepRow& row : rows) {
    out << row.fraction << ',' << row.heuristic << ',' << row.mean_mse << ',' << row.max_deviation;
    for (double v : row.head_mse) out << ',' << v;
    out << '\n';
  }
}

void write_memory_csv(std::ostream& out, const MemoryReport& m) {
  out << "component,bytes\n"
      << "key_sink," << m.key_sink << '\n'
      << "key_qbuffer," << m.key_qbuffer << '\n'
      << "key_pages," << m.key_page_bytes << '\n'
      << "value_sink," << m.value_sink << '\n'
      << "value_local," << m.value_local << '\n'
      << "value_qbuffer," << m.value_qbuffer << '\n'
      << "value_pages," << m.value_page_bytes << '\n'
      << "total," << m.total() << '\n'
      << "fp16_baseline," << m.baseline << '\n';
}

void write_memory_summary(std::ostream& out, const MemoryReport& m) {
  out << "tokens: " << m.tokens << '\n'
      << "key_pages: " << m.key_pages << '\n'
      << "value_pages: " << m.value_pages << '\n'
      << "total_bytes: " << m.total() << '\n'
      << "fp16_baseline_bytes: " << m.baseline << '\n'
      << "compression_ratio: " << std::fixed << std::setprecision(4) << m.ratio() << std::defaultfloat << '\n';
}

}  // namespace kitty
