#include "kitty/config.h"

#include <charconv>
#include <fstream>
#include <sstream>

#include "kitty/page_codec.h"

namespace kitty {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  require(ec == std::errc() && ptr == end, ErrorCode::kInvalidArgument,
          "bad value '" + value + "' for " + key);
  return out;
}

}  // namespace

void KittyConfig::validate() const {
  require(g >= 4 && g % 4 == 0, ErrorCode::kInvalidArgument, "g must be a positive multiple of 4");
  require(d >= 4 && d % 4 == 0, ErrorCode::kInvalidArgument, "d must be a positive multiple of 4");
  require(r >= 1, ErrorCode::kInvalidArgument, "r must be >= 1");
  require(h_kv >= 1 && h_q >= 1 && h_q % h_kv == 0, ErrorCode::kInvalidArgument,
          "h_q must be a positive multiple of h_kv");
  require(key_bits == 2 || key_bits == kPassThroughBits, ErrorCode::kInvalidArgument, "key_bits must be 2 or 16");
  require(value_bits == 2 || value_bits == kPassThroughBits, ErrorCode::kInvalidArgument,
          "value_bits must be 2 or 16");
  require(d_boost() <= kBoostSentinel, ErrorCode::kInvalidArgument,
          "boosted channel count must not exceed 255");
}

KittyConfig KittyConfig::passthrough() {
  KittyConfig cfg;
  cfg.key_bits = kPassThroughBits;
  cfg.value_bits = kPassThroughBits;
  return cfg;
}

void set_config_field(KittyConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "s") cfg.s = parse_number<std::size_t>(key, value);
  else if (key == "r") cfg.r = parse_number<std::size_t>(key, value);
  else if (key == "g") cfg.g = parse_number<std::size_t>(key, value);
  else if (key == "d") cfg.d = parse_number<std::size_t>(key, value);
  else if (key == "h_kv") cfg.h_kv = parse_number<std::size_t>(key, value);
  else if (key == "h_q") cfg.h_q = parse_number<std::size_t>(key, value);
  else if (key == "key_bits") cfg.key_bits = parse_number<int>(key, value);
  else if (key == "value_bits") cfg.value_bits = parse_number<int>(key, value);
  else if (key == "boost_fraction") cfg.boost_fraction = parse_number<double>(key, value);
  else if (key == "seed") cfg.heuristic.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "heuristic") {
    if (value == "magnitude") cfg.heuristic.kind = BoostHeuristic::Kind::kMagnitude;
    else if (value == "random") cfg.heuristic.kind = BoostHeuristic::Kind::kRandom;
    else throw Error(ErrorCode::kInvalidArgument, "heuristic must be magnitude or random, got " + value);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
  }
}

KittyConfig parse_config(const std::string& text, KittyConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::kInvalidArgument,
            "line " + std::to_string(lineno) + ": expected key = value");
    set_config_field(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  base.validate();
  return base;
}

KittyConfig load_config(const std::filesystem::path& path, KittyConfig base) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), base);
}

std::string format_config(const KittyConfig& cfg) {
  std::ostringstream out;
  out << "s=" << cfg.s << " r=" << cfg.r << " g=" << cfg.g << " d=" << cfg.d << " h_kv=" << cfg.h_kv
      << " h_q=" << cfg.h_q << " key_bits=" << cfg.key_bits << " value_bits=" << cfg.value_bits
      << " boost_fraction=" << cfg.boost_fraction << " heuristic="
      << (cfg.heuristic.kind == BoostHeuristic::Kind::kMagnitude ? "magnitude" : "random")
      << " seed=" << cfg.heuristic.seed;
  return out.str();
}

}  // namespace kitty
