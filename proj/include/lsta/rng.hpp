#pragma once

#include <cstdint>

namespace lsta {

// Deterministic 64-bit counter generator (splitmix64). Every draw is a pure
// function of (seed, draw index), which keeps datasets and parameter
// initialization reproducible bit for bit. Constants: increment
// 0x9E3779B97F4A7C15, mixers 0xBF58476D1CE4E5B9 / 0x94D049BB133111EB,
// shifts 30/27/31.
class CounterRng {
 public:
  explicit CounterRng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();

  // Uniform in [0, 1), 53-bit resolution.
  double next_uniform();
  // Uniform in (0, 1]; safe as a log() argument.
  double next_uniform_open();
  double next_uniform(double lo, double hi);
  // Standard normal via Box-Muller; consumes exactly two draws.
  double next_gaussian();
  // Unbiased integer in [0, n) by rejection.
  uint64_t next_below(uint64_t n);

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

 private:
  uint64_t state_;
};

}  // namespace lsta
