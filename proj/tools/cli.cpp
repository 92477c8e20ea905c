#include "cli.h"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "kitty/analysis.h"
#include "kitty/cache.h"
#include "kitty/config.h"
#include "kitty/page_codec.h"
#include "kitty/quant.h"
#include "kitty/rng.h"
#include "kitty/tensor_io.h"

namespace kitty::cli {

namespace {

namespace fs = std::filesystem;

// Signals a failed property check (exit 3) rather than bad input.
struct PropertyFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string header(const std::string& command, const std::string& resolved) {
  return std::string("# kitty-tool ") + kToolVersion + " " + command + " rng=" + kRngAlgorithm + " " + resolved;
}

std::vector<HeadMatrix> split_heads(const HeadMatrix& m, std::size_t heads) {
  require(heads > 0 && m.cols() % heads == 0, ErrorCode::kShapeMismatch,
          "tensor width " + std::to_string(m.cols()) + " is not divisible by " + std::to_string(heads) + " heads");
  const std::size_t d = m.cols() / heads;
  std::vector<HeadMatrix> out(heads, HeadMatrix(m.rows(), d));
  for (std::size_t t = 0; t < m.rows(); ++t)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t c = 0; c < d; ++c) out[h](t, c) = m(t, h * d + c);
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string join(const std::vector<double>& v) {
  std::ostringstream s;
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
  return s.str();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path + " for writing");
  return out;
}

BoostHeuristic parse_heuristic(const std::string& name, std::uint64_t seed) {
  if (name == "magnitude") return BoostHeuristic::magnitude();
  if (name == "random") return BoostHeuristic::random(seed);
  throw Error(ErrorCode::kInvalidArgument, "heuristic must be magnitude or random, got " + name);
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  std::size_t tokens = 0;
  std::size_t channels = 0;
  std::vector<std::size_t> outliers;
  float gain = 1.0f;
  float base_std = 1.0f;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  SyntheticSpec spec{a.tokens, a.channels, a.outliers, a.gain, a.base_std, a.seed};
  write_tensor(generate_synthetic(spec), a.out);
  out << header("gen", "tokens=" + std::to_string(a.tokens) + " channels=" + std::to_string(a.channels) +
                           " outliers=" + join(a.outliers) + " gain=" + std::to_string(a.gain) +
                           " base_std=" + std::to_string(a.base_std) + " seed=" + std::to_string(a.seed))
      << '\n'
      << "wrote: " << a.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- roundtrip

struct RoundtripArgs {
  std::string keys;
  double boost_fraction = 0.125;
  std::size_t group = 128;
  std::string heuristic = "magnitude";
  std::uint64_t seed = 0;
  std::string page_dir;
};

int cmd_roundtrip(const RoundtripArgs& a, std::ostream& out) {
  require(a.group > 0 && a.group % 4 == 0, ErrorCode::kInvalidArgument, "--group must be a positive multiple of 4");
  const HeadMatrix keys = read_tensor(a.keys);
  const std::size_t pages = keys.rows() / a.group;
  if (!a.page_dir.empty()) fs::create_directories(a.page_dir);

  std::size_t mismatches = 0;
  double max_error = 0.0;
  for (std::size_t i = 0; i < pages; ++i) {
    const HeadMatrix block = keys.slice_rows(i * a.group, a.group);
    const BoostSelection sel =
        select_boost(channel_scores(block), a.boost_fraction, parse_heuristic(a.heuristic, mix_seed(a.seed, i)));
    QuantizedKeyPage page = pack_key_page(block, sel);
    if (!a.page_dir.empty()) {
      const fs::path path = fs::path(a.page_dir) / ("page_" + std::to_string(i) + ".ktyp");
      write_file(serialize_page(page), path);
      page = std::get<QuantizedKeyPage>(deserialize_page(read_file(path)));
    }
    const HeadMatrix packed = dequantize_key_page(page).transposed();
    const HeadMatrix oracle = fake_quantize_matrix(block, QuantAxis::kPerChannel, lane_bits(sel, block.cols()));
    if (!bit_equal(packed, oracle)) ++mismatches;
    for (std::size_t k = 0; k < block.data().size(); ++k)
      max_error = std::max(max_error, std::fabs(static_cast<double>(packed.data()[k]) - block.data()[k]));
  }
  out << header("roundtrip", "keys=" + a.keys + " boost_fraction=" + std::to_string(a.boost_fraction) +
                                 " group=" + std::to_string(a.group) + " heuristic=" + a.heuristic +
                                 " seed=" + std::to_string(a.seed))
      << '\n'
      << "pages: " << pages << '\n'
      << "residual_tokens: " << keys.rows() % a.group << '\n'
      << "mismatched_pages: " << mismatches << '\n'
      << "max_abs_error_vs_input: " << std::setprecision(9) << max_error << '\n'
      << "status: " << (mismatches == 0 ? "PASS" : "FAIL") << '\n';
  if (mismatches != 0) throw PropertyFailure(std::to_string(mismatches) + " pages differ from the fake-quant oracle");
  return kExitOk;
}

// ---------------------------------------------------------------- quantize-page

struct QuantizePageArgs {
  std::string input;
  std::string kind = "key";
  std::size_t page_index = 0;
  std::size_t group = 128;
  double boost_fraction = 0.125;
  std::string out;
};

int cmd_quantize_page(const QuantizePageArgs& a, std::ostream& out) {
  const HeadMatrix tokens = read_tensor(a.input);
  require((a.page_index + 1) * a.group <= tokens.rows(), ErrorCode::kInvalidArgument,
          "page " + std::to_string(a.page_index) + " lies beyond the input");
  const HeadMatrix block = tokens.slice_rows(a.page_index * a.group, a.group);
  std::vector<std::uint8_t> bytes;
  if (a.kind == "key") {
    const BoostSelection sel = select_boost(channel_scores(block), a.boost_fraction, BoostHeuristic::magnitude());
    bytes = serialize_page(pack_key_page(block, sel));
  } else if (a.kind == "value") {
    bytes = serialize_page(pack_value_page(block));
  } else {
    throw Error(ErrorCode::kInvalidArgument, "--kind must be key or value");
  }
  write_file(bytes, a.out);
  out << header("quantize-page", "input=" + a.input + " kind=" + a.kind + " page=" + std::to_string(a.page_index) +
                                     " group=" + std::to_string(a.group) +
                                     " boost_fraction=" + std::to_string(a.boost_fraction))
      << '\n'
      << "bytes: " << bytes.size() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- sensitivity

struct SensitivityArgs {
  std::string keys;
  std::string queries;
  std::size_t kv_heads = 1;
  std::size_t q_heads = 1;
  int bits = 2;
  std::string out;
};

int cmd_sensitivity(const SensitivityArgs& a, std::ostream& out) {
  const auto keys = split_heads(read_tensor(a.keys), a.kv_heads);
  const auto queries = split_heads(read_tensor(a.queries), a.q_heads);
  const SensitivityReport report = channel_sensitivity(queries, keys, a.bits);
  const std::string resolved = "keys=" + a.keys + " queries=" + a.queries + " kv_heads=" + std::to_string(a.kv_heads) +
                               " q_heads=" + std::to_string(a.q_heads) + " bits=" + std::to_string(a.bits);
  {
    std::ofstream csv = open_out(a.out);
    csv << header("sensitivity", resolved) << '\n';
    write_sensitivity_csv(csv, report);
  }
  const std::size_t top = std::min<std::size_t>(8, report.mean_ranking.size());
  out << header("sensitivity", resolved) << '\n'
      << "top_channels: "
      << join(std::vector<std::size_t>(report.mean_ranking.begin(), report.mean_ranking.begin() + top)) << '\n'
      << "wrote: " << a.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
  std::string keys;
  std::string queries;
  std::size_t kv_heads = 1;
  std::size_t q_heads = 4;
  std::vector<double> fractions = {0.0, 0.125, 0.25, 0.5, 1.0};
  std::vector<std::string> heuristics = {"magnitude", "random"};
  std::size_t seeds = 20;
  std::uint64_t seed = 0;
  // synthetic data when --keys is absent
  std::size_t tokens = 1024;
  std::size_t channels = 128;
  std::size_t query_tokens = 16;
  std::vector<std::size_t> outliers = {3, 17, 29, 41, 60, 77, 95, 110};
  float gain = 8.0f;
  std::string out;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  SweepOptions options;
  options.fractions = a.fractions;
  options.magnitude = false;
  bool random = false;
  for (const std::string& h : a.heuristics) {
    if (h == "magnitude") options.magnitude = true;
    else if (h == "random") random = true;
    else throw Error(ErrorCode::kInvalidArgument, "unknown heuristic " + h);
  }
  require(a.seeds > 0, ErrorCode::kInvalidArgument, "--seeds must be >= 1");

  std::vector<SweepRow> rows;
  std::string resolved = "fractions=" + join(a.fractions) + " seeds=" + std::to_string(a.seeds) +
                         " seed=" + std::to_string(a.seed) + " kv_heads=" + std::to_string(a.kv_heads) +
                         " q_heads=" + std::to_string(a.q_heads);
  if (!a.keys.empty()) {
    require(!a.queries.empty(), ErrorCode::kInvalidArgument, "--queries is required with --keys");
    options.random_seeds = random ? a.seeds : 0;
    options.seed = a.seed;
    rows = boost_sweep(split_heads(read_tensor(a.queries), a.q_heads), split_heads(read_tensor(a.keys), a.kv_heads),
                       options);
    resolved += " keys=" + a.keys + " queries=" + a.queries;
  } else {
    // One synthetic data set per seed, one random selection per data set.
    options.random_seeds = random ? 1 : 0;
    std::vector<std::vector<SweepRow>> runs;
    for (std::size_t s = 0; s < a.seeds; ++s) {
      const std::uint64_t data_seed = mix_seed(a.seed, s);
      std::vector<HeadMatrix> keys;
      std::vector<HeadMatrix> queries;
      for (std::size_t h = 0; h < a.kv_heads; ++h)
        keys.push_back(generate_synthetic({a.tokens, a.channels, a.outliers, a.gain, 1.0f, mix_seed(data_seed, h, 1)}));
      for (std::size_t h = 0; h < a.q_heads; ++h)
        queries.push_back(generate_synthetic({a.query_tokens, a.channels, {}, 1.0f, 1.0f, mix_seed(data_seed, h, 2)}));
      options.seed = mix_seed(data_seed, 3);
      runs.push_back(boost_sweep(queries, keys, options));
    }
    rows = aggregate_sweeps(runs);
    resolved += " synthetic tokens=" + std::to_string(a.tokens) + " channels=" + std::to_string(a.channels) +
                " query_tokens=" + std::to_string(a.query_tokens) + " outliers=" + join(a.outliers) +
                " gain=" + std::to_string(a.gain);
  }

  const std::string head_line = header("sweep", resolved);
  if (!a.out.empty()) {
    std::ofstream csv = open_out(a.out);
    csv << head_line << '\n';
    write_sweep_csv(csv, rows);
  }
  out << head_line << '\n';
  write_sweep_csv(out, rows);
  return kExitOk;
}

// ---------------------------------------------------------------- simulate-decode / mem-report

KittyConfig resolve_config(const std::string& path, const std::vector<std::string>& sets) {
  KittyConfig cfg = path.empty() ? KittyConfig{} : load_config(path);
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos, ErrorCode::kInvalidArgument, "--set expects key=value, got " + kv);
    set_config_field(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

struct SimulateArgs {
  std::string config;
  std::vector<std::string> sets;
  std::size_t prompt_len = 100;
  std::size_t decode_steps = 1000;
  std::string mode = "kitty";
  std::uint64_t seed = 0;
  std::vector<std::size_t> outliers = {3, 17, 29, 41, 60, 77, 95, 110};
  float gain = 8.0f;
  bool check = false;
  std::string out;
  std::string dump_outputs;
};

int cmd_simulate_decode(const SimulateArgs& a, std::ostream& out) {
  KittyConfig cfg = resolve_config(a.config, a.sets);
  if (a.mode == "passthrough") {
    cfg.key_bits = kPassThroughBits;
    cfg.value_bits = kPassThroughBits;
  } else if (a.mode != "kitty" && a.mode != "oracle") {
    throw Error(ErrorCode::kInvalidArgument, "--mode must be kitty, passthrough or oracle");
  }
  std::vector<std::size_t> outliers;
  for (std::size_t c : a.outliers)
    if (c < cfg.d) outliers.push_back(c);

  const std::size_t total = a.prompt_len + a.decode_steps;
  std::vector<HeadMatrix> keys;
  std::vector<HeadMatrix> values;
  for (std::size_t h = 0; h < cfg.h_kv; ++h) {
    keys.push_back(generate_synthetic({total, cfg.d, outliers, a.gain, 1.0f, mix_seed(a.seed, h, 1)}));
    values.push_back(generate_synthetic({total, cfg.d, {}, 1.0f, 1.0f, mix_seed(a.seed, h, 2)}));
  }
  // Row i holds the query heads of decode step i, concatenated.
  const HeadMatrix queries =
      generate_synthetic({a.decode_steps, cfg.h_q * cfg.d, {}, 1.0f, 1.0f, mix_seed(a.seed, 0, 3)});

  const bool use_cache = a.mode != "oracle";
  KittyCache cache(cfg);
  if (use_cache && a.prompt_len > 0) {
    std::vector<HeadMatrix> pk, pv;
    for (std::size_t h = 0; h < cfg.h_kv; ++h) {
      pk.push_back(keys[h].slice_rows(0, a.prompt_len));
      pv.push_back(values[h].slice_rows(0, a.prompt_len));
    }
    cache.prefill(pk, pv);
  }

  const std::string resolved = "mode=" + a.mode + " prompt_len=" + std::to_string(a.prompt_len) +
                               " decode_steps=" + std::to_string(a.decode_steps) + " data_seed=" +
                               std::to_string(a.seed) + " outliers=" + join(outliers) +
                               " gain=" + std::to_string(a.gain) + " " + format_config(cfg);
  std::ofstream csv;
  if (!a.out.empty()) {
    csv = open_out(a.out);
    csv << header("simulate-decode", resolved) << '\n'
        << "step,tokens,key_pages,value_pages,key_pack_events,value_pack_events,output_l2"
        << (a.check ? ",max_rel_dev" : "") << '\n';
  }
  HeadMatrix dumped(a.decode_steps, cfg.h_q * cfg.d);
  std::size_t decode_key_events = 0;
  std::size_t decode_value_events = 0;
  const std::size_t prefill_key_events = use_cache ? cache.head(0).key_pack_events : 0;
  const std::size_t prefill_value_events = use_cache ? cache.head(0).value_pack_events : 0;
  double max_dev = 0.0;

  for (std::size_t step = 0; step < a.decode_steps; ++step) {
    const std::size_t t = a.prompt_len + step;
    const HeadMatrix q(cfg.h_q, cfg.d, std::vector<float>(queries.row(step).begin(), queries.row(step).end()));
    HeadMatrix output;
    if (use_cache) {
      HeadMatrix k_new(cfg.h_kv, cfg.d);
      HeadMatrix v_new(cfg.h_kv, cfg.d);
      for (std::size_t h = 0; h < cfg.h_kv; ++h) {
        std::copy(keys[h].row(t).begin(), keys[h].row(t).end(), k_new.row(h).begin());
        std::copy(values[h].row(t).begin(), values[h].row(t).end(), v_new.row(h).begin());
      }
      output = cache.decode_step(k_new, v_new, q).outputs;
    } else {
      output = oracle_attend(keys, values, q, false, t + 1).outputs;
    }
    double dev = 0.0;
    if (a.check && use_cache) {
      dev = max_relative_deviation(output, oracle_attend(keys, values, q, false, t + 1).outputs);
      max_dev = std::max(max_dev, dev);
    }
    std::copy(output.data().begin(), output.data().end(), dumped.row(step).begin());
    if (csv.is_open()) {
      double l2 = 0.0;
      for (float v : output.data()) l2 += static_cast<double>(v) * v;
      const HeadState* hs = use_cache ? &cache.head(0) : nullptr;
      csv << step << ',' << t + 1 << ',' << (hs ? hs->key_pages.size() : 0) << ','
          << (hs ? hs->value_pages.size() : 0) << ',' << (hs ? hs->key_pack_events : 0) << ','
          << (hs ? hs->value_pack_events : 0) << ',' << std::setprecision(9) << std::sqrt(l2);
      if (a.check) csv << ',' << dev;
      csv << '\n';
    }
  }
  if (use_cache) {
    decode_key_events = cache.head(0).key_pack_events - prefill_key_events;
    decode_value_events = cache.head(0).value_pack_events - prefill_value_events;
    cache.check_invariants();
  }
  if (!a.dump_outputs.empty()) write_tensor(dumped, a.dump_outputs);

  const std::size_t bound = (a.decode_steps + cfg.g - 1) / cfg.g + 1;
  out << header("simulate-decode", resolved) << '\n'
      << "steps: " << a.decode_steps << '\n'
      << "decode_key_pack_events: " << decode_key_events << '\n'
      << "decode_value_pack_events: " << decode_value_events << '\n'
      << "pack_event_bound: " << bound << '\n';
  if (a.check && use_cache) out << "max_rel_dev_vs_oracle: " << std::setprecision(6) << max_dev << '\n';
  if (use_cache) write_memory_summary(out, measure_memory(cache));

  if (decode_key_events > bound || decode_value_events > bound)
    throw PropertyFailure("pack events exceed ceil(N/G)+1");
  if (a.check && a.mode == "passthrough" && max_dev > 1e-5)
    throw PropertyFailure("pass-through output deviates from the dense oracle");
  return kExitOk;
}

struct MemReportArgs {
  std::string config;
  std::vector<std::string> sets;
  std::size_t length = 8192;
  bool no_metadata = false;
  bool measure = false;
  std::string out;
};

int cmd_mem_report(const MemReportArgs& a, std::ostream& out) {
  const KittyConfig cfg = resolve_config(a.config, a.sets);
  const MemoryReport report = memory_report(cfg, a.length, !a.no_metadata);
  const std::string resolved =
      "length=" + std::to_string(a.length) + " metadata=" + (a.no_metadata ? "off" : "on") + " " + format_config(cfg);
  out << header("mem-report", resolved) << '\n';
  write_memory_csv(out, report);
  write_memory_summary(out, report);
  if (!a.out.empty()) {
    std::ofstream csv = open_out(a.out);
    csv << header("mem-report", resolved) << '\n';
    write_memory_csv(csv, report);
  }
  if (a.measure) {
    KittyCache cache(cfg);
    std::vector<HeadMatrix> k, v;
    for (std::size_t h = 0; h < cfg.h_kv; ++h) {
      k.push_back(generate_synthetic({a.length, cfg.d, {}, 1.0f, 1.0f, mix_seed(0, h, 1)}));
      v.push_back(generate_synthetic({a.length, cfg.d, {}, 1.0f, 1.0f, mix_seed(0, h, 2)}));
    }
    if (a.length > 0) cache.prefill(k, v);
    const MemoryReport measured = measure_memory(cache, !a.no_metadata);
    out << "measured_total_bytes: " << measured.total() << '\n'
        << "closed_form_matches: " << (measured == report ? "yes" : "no") << '\n';
    if (!(measured == report)) throw PropertyFailure("closed-form report differs from measured state");
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Kitty mixed-precision KV cache: codecs, decode simulation and analysis", "kitty-tool"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic KTY1 tensor with outlier channels");
  gen_cmd->add_option("--tokens", gen.tokens)->required();
  gen_cmd->add_option("--channels", gen.channels)->required();
  gen_cmd->add_option("--outliers", gen.outliers)->delimiter(',');
  gen_cmd->add_option("--gain", gen.gain)->capture_default_str();
  gen_cmd->add_option("--std", gen.base_std)->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--out", gen.out)->required();

  RoundtripArgs rt;
  auto* rt_cmd = app.add_subcommand("roundtrip", "Pack/dequantize every key page and compare with fake quantization");
  rt_cmd->add_option("--keys", rt.keys)->required();
  rt_cmd->add_option("--boost-fraction", rt.boost_fraction)->capture_default_str();
  rt_cmd->add_option("--group", rt.group)->capture_default_str();
  rt_cmd->add_option("--heuristic", rt.heuristic)->capture_default_str();
  rt_cmd->add_option("--seed", rt.seed)->capture_default_str();
  rt_cmd->add_option("--page-dir", rt.page_dir, "Also write each page as KTYP and reread it");

  QuantizePageArgs qp;
  auto* qp_cmd = app.add_subcommand("quantize-page", "Pack one G-token block of a tensor into a KTYP page");
  qp_cmd->add_option("--input", qp.input)->required();
  qp_cmd->add_option("--kind", qp.kind)->capture_default_str();
  qp_cmd->add_option("--page-index", qp.page_index)->capture_default_str();
  qp_cmd->add_option("--group", qp.group)->capture_default_str();
  qp_cmd->add_option("--boost-fraction", qp.boost_fraction)->capture_default_str();
  qp_cmd->add_option("--out", qp.out)->required();

  SensitivityArgs sens;
  auto* sens_cmd = app.add_subcommand("sensitivity", "Per-channel 2-bit quantization sensitivity of attention");
  sens_cmd->add_option("--keys", sens.keys, "L x (kv_heads*D) KTY1 tensor")->required();
  sens_cmd->add_option("--queries", sens.queries, "Lq x (q_heads*D) KTY1 tensor")->required();
  sens_cmd->add_option("--kv-heads", sens.kv_heads)->capture_default_str();
  sens_cmd->add_option("--q-heads", sens.q_heads)->capture_default_str();
  sens_cmd->add_option("--bits", sens.bits)->capture_default_str();
  sens_cmd->add_option("--out", sens.out)->required();

  SweepArgs sw;
  auto* sw_cmd = app.add_subcommand("sweep", "Attention MSE across boost fractions and selection heuristics");
  sw_cmd->add_option("--keys", sw.keys);
  sw_cmd->add_option("--queries", sw.queries);
  sw_cmd->add_option("--kv-heads", sw.kv_heads)->capture_default_str();
  sw_cmd->add_option("--q-heads", sw.q_heads)->capture_default_str();
  sw_cmd->add_option("--fractions", sw.fractions)->delimiter(',')->capture_default_str();
  sw_cmd->add_option("--heuristics", sw.heuristics)->delimiter(',')->capture_default_str();
  sw_cmd->add_option("--seeds", sw.seeds)->capture_default_str();
  sw_cmd->add_option("--seed", sw.seed)->capture_default_str();
  sw_cmd->add_option("--tokens", sw.tokens)->capture_default_str();
  sw_cmd->add_option("--channels", sw.channels)->capture_default_str();
  sw_cmd->add_option("--query-tokens", sw.query_tokens)->capture_default_str();
  sw_cmd->add_option("--outliers", sw.outliers)->delimiter(',')->capture_default_str();
  sw_cmd->add_option("--gain", sw.gain)->capture_default_str();
  sw_cmd->add_option("--out", sw.out);

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate-decode", "Run prefill plus N decode steps through the cache");
  sim_cmd->add_option("--config", sim.config, "key = value config file");
  sim_cmd->add_option("--set", sim.sets, "Override a config field, key=value");
  sim_cmd->add_option("--prompt-len", sim.prompt_len)->capture_default_str();
  sim_cmd->add_option("--decode-steps", sim.decode_steps)->capture_default_str();
  sim_cmd->add_option("--mode", sim.mode)->check(CLI::IsMember({"kitty", "passthrough", "oracle"}))->capture_default_str();
  sim_cmd->add_option("--seed", sim.seed)->capture_default_str();
  sim_cmd->add_option("--outliers", sim.outliers)->delimiter(',')->capture_default_str();
  sim_cmd->add_option("--gain", sim.gain)->capture_default_str();
  sim_cmd->add_flag("--check", sim.check, "Compare every step with dense attention over the raw history");
  sim_cmd->add_option("--out", sim.out, "Per-step CSV");
  sim_cmd->add_option("--dump-outputs", sim.dump_outputs, "Write outputs as a steps x (h_q*d) KTY1 tensor");

  MemReportArgs mem;
  auto* mem_cmd = app.add_subcommand("mem-report", "Closed-form KV memory accounting");
  mem_cmd->add_option("--config", mem.config);
  mem_cmd->add_option("--set", mem.sets);
  mem_cmd->add_option("--length", mem.length)->capture_default_str();
  mem_cmd->add_flag("--no-metadata", mem.no_metadata, "Count packed codes and FP rows only");
  mem_cmd->add_flag("--measure", mem.measure, "Also build the cache and compare measured bytes");
  mem_cmd->add_option("--out", mem.out);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream msg;
    const int code = app.exit(e, out, msg);
    err << msg.str();
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen, out);
    if (*rt_cmd) return cmd_roundtrip(rt, out);
    if (*qp_cmd) return cmd_quantize_page(qp, out);
    if (*sens_cmd) return cmd_sensitivity(sens, out);
    if (*sw_cmd) return cmd_sweep(sw, out);
    if (*sim_cmd) return cmd_simulate_decode(sim, out);
    if (*mem_cmd) return cmd_mem_report(mem, out);
  } catch (const PropertyFailure& e) {
    err << "property check failed: " << e.what() << '\n';
    return kExitPropertyFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    switch (e.code()) {
      case ErrorCode::kBadMagic:
      case ErrorCode::kUnknownDtype:
      case ErrorCode::kBadRank:
      case ErrorCode::kTruncated:
      case ErrorCode::kIo:
        return kExitIo;
      default:
        return kExitValidation;
    }
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitValidation;
}

}  // namespace kitty::cli
