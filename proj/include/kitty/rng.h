#pragma once

#include <cstdint>
#include <random>

namespace kitty {

// Identifier echoed into reports so runs can be reproduced elsewhere.
inline constexpr const char* kRngAlgorithm = "mt19937_64/box-muller";

// Seeded generator with a portable normal transform. std::normal_distribution
// is implementation-defined, so it is avoided here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double gaussian();

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace kitty
