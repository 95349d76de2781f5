#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace wfkit {

// Seeded generator with distribution code written out here rather than taken
// from <random>, whose distributions are implementation-defined. Same seed,
// same stream, on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Inclusive on both ends.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();
  double exponential(double mean);
  double rayleigh(double scale);
  std::int64_t poisson(double mean);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

// Child seed for a labeled stage/item: independent streams per (label, index)
// so parallel and serial builds consume identical randomness.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                          std::uint64_t index = 0);

}  // namespace wfkit
