#include "voxaug/mutual_info.hpp"

#include <omp.h>

#include <cmath>
#include <vector>

namespace voxaug {

double mutual_information(const Volume& a, const Volume& b, const LabelMask& region, int bins,
                          ExecPolicy policy) {
  if (!a.grid.same_geometry(b.grid) || !a.grid.same_geometry(region.grid))
    fail(ErrorCode::Argument, "mutual_information: geometry mismatch");
  if (bins < 2) fail(ErrorCode::Argument, "mutual_information: bins must be >= 2");

  double amin = 0, amax = 0, bmin = 0, bmax = 0;
  bool first = true;
  for (std::size_t i = 0; i < region.data.size(); ++i) {
    if (region.data[i] == 0) continue;
    const double av = a.data[i], bv = b.data[i];
    if (first) {
      amin = amax = av;
      bmin = bmax = bv;
      first = false;
    } else {
      amin = std::min(amin, av);
      amax = std::max(amax, av);
      bmin = std::min(bmin, bv);
      bmax = std::max(bmax, bv);
    }
  }
  if (first) fail(ErrorCode::Argument, "mutual_information: empty region");

  const double ascale = amax > amin ? bins / (amax - amin) : 0.0;
  const double bscale = bmax > bmin ? bins / (bmax - bmin) : 0.0;
  auto bin_of = [bins](double v, double mn, double scale) {
    int k = static_cast<int>((v - mn) * scale);
    return k < 0 ? 0 : (k >= bins ? bins - 1 : k);
  };

  // Integer joint counts; per-thread histograms merge exactly, so the
  // parallel path is bit-identical to the serial one.
  std::vector<std::int64_t> joint(static_cast<std::size_t>(bins) * bins, 0);
  const std::int64_t n = static_cast<std::int64_t>(region.data.size());
  if (policy == ExecPolicy::Serial) {
    for (std::int64_t i = 0; i < n; ++i) {
      if (region.data[i] == 0) continue;
      joint[static_cast<std::size_t>(bin_of(a.data[i], amin, ascale)) * bins +
            bin_of(b.data[i], bmin, bscale)]++;
    }
  } else {
#pragma omp parallel
    {
      std::vector<std::int64_t> local(joint.size(), 0);
#pragma omp for schedule(static) nowait
      for (std::int64_t i = 0; i < n; ++i) {
        if (region.data[i] == 0) continue;
        local[static_cast<std::size_t>(bin_of(a.data[i], amin, ascale)) * bins +
              bin_of(b.data[i], bmin, bscale)]++;
      }
#pragma omp critical
      for (std::size_t k = 0; k < joint.size(); ++k) joint[k] += local[k];
    }
  }

  std::int64_t total = 0;
  for (auto c : joint) total += c;
  std::vector<std::int64_t> ha(bins, 0), hb(bins, 0);
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      ha[i] += joint[static_cast<std::size_t>(i) * bins + j];
      hb[j] += joint[static_cast<std::size_t>(i) * bins + j];
    }

  auto entropy = [total](const std::vector<std::int64_t>& h) {
    double e = 0.0;
    for (auto c : h) {
      if (c == 0) continue;
      const double p = static_cast<double>(c) / static_cast<double>(total);
      e -= p * std::log(p);
    }
    return e;
  };
  const double mi = entropy(ha) + entropy(hb) - entropy(joint);
  return mi < 0.0 ? 0.0 : mi;  // guard tiny negative round-off
}

}  // namespace voxaug
