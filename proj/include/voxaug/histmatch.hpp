#pragma once

#include <vector>

#include "voxaug/volume.hpp"

namespace voxaug {

// Monotone intensity mapping built from binned CDFs: maps source intensities
// so that their distribution over source_region approximates the reference
// distribution over reference_region. The regions define the statistics
// only; apply() transforms any value.
class HistogramMapping {
public:
  HistogramMapping(const Volume& source, const LabelMask& source_region, const Volume& reference,
                   const LabelMask& reference_region, int bins);

  double apply(double v) const;  // piecewise-linear, monotone non-decreasing

private:
  std::vector<double> in_;   // source bin centers (ascending)
  std::vector<double> out_;  // matched outputs (non-decreasing)
};

// Mask-constrained histogram matching: statistics over the stated regions,
// mapping applied to every source voxel.
Volume match_histogram(const Volume& source, const Volume& reference,
                       const LabelMask& source_region, const LabelMask& reference_region, int bins,
                       ExecPolicy policy = ExecPolicy::Parallel);

}  // namespace voxaug
