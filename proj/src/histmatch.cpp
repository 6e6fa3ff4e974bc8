#include "voxaug/histmatch.hpp"

#include <algorithm>
#include <cmath>

namespace voxaug {

namespace {

struct RegionCdf {
  std::vector<double> centers;  // bin centers, ascending
  std::vector<double> cdf;      // mid-bin cumulative fractions, non-decreasing
};

RegionCdf build_cdf(const Volume& vol, const LabelMask& region, int bins) {
  if (!vol.grid.same_geometry(region.grid))
    fail(ErrorCode::Argument, "match_histogram: region geometry mismatch");
  double mn = 0, mx = 0;
  std::int64_t total = 0;
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    if (region.data[i] == 0) continue;
    const double v = vol.data[i];
    if (total == 0) {
      mn = mx = v;
    } else {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    ++total;
  }
  if (total == 0) fail(ErrorCode::Argument, "match_histogram: empty region");

  std::vector<std::int64_t> hist(bins, 0);
  const double scale = mx > mn ? bins / (mx - mn) : 0.0;
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    if (region.data[i] == 0) continue;
    int b = static_cast<int>((vol.data[i] - mn) * scale);
    hist[std::clamp(b, 0, bins - 1)]++;
  }

  RegionCdf out;
  out.centers.resize(bins);
  out.cdf.resize(bins);
  const double width = mx > mn ? (mx - mn) / bins : 1.0;
  std::int64_t cum = 0;
  for (int i = 0; i < bins; ++i) {
    out.centers[i] = mn + (i + 0.5) * width;
    // Mid-bin CDF: half of the bin's own mass counts, which makes matching a
    // distribution against itself the identity at every bin center.
    out.cdf[i] = (cum + hist[i] / 2.0) / static_cast<double>(total);
    cum += hist[i];
  }
  return out;
}

// Inverse CDF with linear interpolation between bin centers.
double inverse_cdf(const RegionCdf& r, double q) {
  const auto& c = r.cdf;
  if (q <= c.front()) return r.centers.front();
  if (q >= c.back()) return r.centers.back();
  const auto it = std::lower_bound(c.begin(), c.end(), q);
  const std::size_t j = static_cast<std::size_t>(it - c.begin());
  const double c0 = c[j - 1], c1 = c[j];
  const double t = c1 > c0 ? (q - c0) / (c1 - c0) : 0.0;
  return r.centers[j - 1] + t * (r.centers[j] - r.centers[j - 1]);
}

}  // namespace

HistogramMapping::HistogramMapping(const Volume& source, const LabelMask& source_region,
                                   const Volume& reference, const LabelMask& reference_region,
                                   int bins) {
  if (bins < 2) fail(ErrorCode::Argument, "match_histogram: bins must be >= 2");
  const RegionCdf src = build_cdf(source, source_region, bins);
  const RegionCdf ref = build_cdf(reference, reference_region, bins);
  in_ = src.centers;
  out_.resize(in_.size());
  for (std::size_t i = 0; i < in_.size(); ++i) out_[i] = inverse_cdf(ref, src.cdf[i]);
  for (std::size_t i = 1; i < out_.size(); ++i) out_[i] = std::max(out_[i], out_[i - 1]);
}

double HistogramMapping::apply(double v) const {
  if (v <= in_.front()) return out_.front();
  if (v >= in_.back()) return out_.back();
  const auto it = std::upper_bound(in_.begin(), in_.end(), v);
  const std::size_t j = static_cast<std::size_t>(it - in_.begin());
  const double t = (v - in_[j - 1]) / (in_[j] - in_[j - 1]);
  return out_[j - 1] + t * (out_[j] - out_[j - 1]);
}

Volume match_histogram(const Volume& source, const Volume& reference,
                       const LabelMask& source_region, const LabelMask& reference_region, int bins,
                       ExecPolicy policy) {
  const HistogramMapping psi(source, source_region, reference, reference_region, bins);
  Volume out = source;
  const std::int64_t n = static_cast<std::int64_t>(out.data.size());
  if (policy == ExecPolicy::Serial) {
    for (std::int64_t i = 0; i < n; ++i) out.data[i] = static_cast<float>(psi.apply(source.data[i]));
  } else {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) out.data[i] = static_cast<float>(psi.apply(source.data[i]));
  }
  return out;
}

}  // namespace voxaug
