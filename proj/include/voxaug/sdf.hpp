#pragma once

#include "voxaug/volume.hpp"

namespace voxaug {

// Per-voxel signed Euclidean distance in voxel units, positive inside the
// mask: +distance to the nearest background voxel center inside, -distance
// to the nearest foreground voxel center outside. Exact (squared-distance
// separable transform), so inside boundary voxels carry values >= 1.
struct SignedDistanceField {
  GridSpec grid;
  std::vector<double> values;

  double at(int x, int y, int z) const { return values[grid.index(x, y, z)]; }
};

SignedDistanceField signed_distance(const LabelMask& mask,
                                    ExecPolicy policy = ExecPolicy::Parallel);

// Alpha weights per Eq.-style clamp(SDF/tau, 0, 1): 1 in the lesion core
// (SDF > tau), 0 at and outside the boundary (SDF <= 0), linear in between.
struct AlphaMap {
  GridSpec grid;
  std::vector<float> weights;
  double bandwidth = 4.0;  // tau, voxels
};

AlphaMap alpha_map(const SignedDistanceField& sdf, double tau,
                   ExecPolicy policy = ExecPolicy::Parallel);

// Separable Gaussian smoothing, kernel truncated at 3*sigma and renormalized
// where it overhangs the volume edge.
Volume gaussian_blur(const Volume& vol, double sigma, ExecPolicy policy = ExecPolicy::Parallel);

}  // namespace voxaug
