#include "voxaug/mixing.hpp"

#include <algorithm>
#include <cmath>

namespace voxaug {

double BetaSampler::next() {
  // Beta(2,2) = X/(X+Y) with X,Y ~ Gamma(2,1); Gamma(2,1) = -log(u1*u2).
  const double x = -std::log(rng_.uniform_pos() * rng_.uniform_pos());
  const double y = -std::log(rng_.uniform_pos() * rng_.uniform_pos());
  const double w = x / (x + y);
  return std::clamp(w, 0x1.0p-53, 1.0 - 0x1.0p-53);
}

MixWeights sample_mix_weights(BetaSampler& sampler) { return MixWeights::of(sampler.next()); }

}  // namespace voxaug
