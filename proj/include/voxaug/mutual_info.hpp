#pragma once

#include "voxaug/volume.hpp"

namespace voxaug {

// Mutual information in nats from a bins x bins joint histogram over the
// region's voxels. Bins are hard (no Parzen window) and span each image's
// min-max range inside the region. MI = H(a) + H(b) - H(a,b) >= 0.
double mutual_information(const Volume& a, const Volume& b, const LabelMask& region, int bins,
                          ExecPolicy policy = ExecPolicy::Parallel);

}  // namespace voxaug
