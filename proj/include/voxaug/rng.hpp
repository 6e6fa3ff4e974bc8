#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace voxaug {

// All randomness in the library flows through this wrapper so that draw
// sequences are reproducible across platforms. std::mt19937_64 supplies the
// raw bits; the transforms below are spelled out instead of using the
// standard distributions, whose outputs are implementation-defined.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log() argument.
  double uniform_pos() { return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal via Box-Muller; one spare value cached.
  double normal();

private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Deterministic stream derivation: hashes (base, tag, a, b) into a fresh
// seed so that independent work items get independent, order-free streams.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a = 0,
                          std::uint64_t b = 0);

}  // namespace voxaug
