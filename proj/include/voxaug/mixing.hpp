#pragma once

#include <cstdint>

#include "voxaug/field.hpp"
#include "voxaug/rng.hpp"

namespace voxaug {

// Beta(2,2) weight sampler (mean 0.5, variance 0.05). Deterministic given
// the seed; draws lie strictly inside (0,1).
class BetaSampler {
public:
  explicit BetaSampler(std::uint64_t seed) : seed_(seed), rng_(seed) {}

  double next();
  std::uint64_t seed() const { return seed_; }

private:
  std::uint64_t seed_;
  Rng rng_;
};

MixWeights sample_mix_weights(BetaSampler& sampler);

}  // namespace voxaug
