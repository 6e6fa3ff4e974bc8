#include "voxaug/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace voxaug {

Eigen::Vector3d GridSpec::voxel_to_world(const Eigen::Vector3d& v) const {
  return affine.block<3, 3>(0, 0) * v + affine.block<3, 1>(0, 3);
}

Eigen::Vector3d GridSpec::world_to_voxel(const Eigen::Vector3d& w) const {
  Eigen::Matrix4d inv = affine.inverse();
  return inv.block<3, 3>(0, 0) * w + inv.block<3, 1>(0, 3);
}

bool GridSpec::same_geometry(const GridSpec& o, double tol) const {
  if (dims != o.dims) return false;
  for (int i = 0; i < 3; ++i)
    if (std::abs(spacing[i] - o.spacing[i]) > tol) return false;
  return (affine - o.affine).cwiseAbs().maxCoeff() <= tol;
}

void GridSpec::validate() const {
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
    fail(ErrorCode::Argument, "GridSpec: dims must be positive");
  for (int i = 0; i < 3; ++i)
    if (!(spacing[i] > 0.0) || !std::isfinite(spacing[i]))
      fail(ErrorCode::Argument, "GridSpec: spacing must be strictly positive");
  if ((affine.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12)
    fail(ErrorCode::Argument, "GridSpec: affine last row must be 0 0 0 1");
  // Direction = rotation columns after dividing out the per-axis scale.
  Eigen::Matrix3d dir;
  for (int c = 0; c < 3; ++c) {
    Eigen::Vector3d col = affine.block<3, 1>(0, c);
    double n = col.norm();
    if (!(n > 0.0)) fail(ErrorCode::Argument, "GridSpec: degenerate direction column");
    dir.col(c) = col / n;
  }
  if ((dir.transpose() * dir - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-4)
    fail(ErrorCode::Argument, "GridSpec: direction not orthonormal within 1e-4");
}

GridSpec GridSpec::resampled_iso(double s) const {
  if (!(s > 0.0)) fail(ErrorCode::Argument, "resampled_iso: spacing must be positive");
  GridSpec out;
  Eigen::Matrix3d dir;
  for (int c = 0; c < 3; ++c) dir.col(c) = affine.block<3, 1>(0, c) / spacing[c];
  for (int i = 0; i < 3; ++i) {
    double extent = spacing[i] * dims[i];
    out.dims[i] = std::max(1, static_cast<int>(std::ceil(extent / s - 1e-9)));
    out.spacing[i] = s;
  }
  out.affine.setIdentity();
  out.affine.block<3, 3>(0, 0) = dir * Eigen::Vector3d(s, s, s).asDiagonal();
  // Keep the world position of the corner voxel's corner fixed, so the new
  // grid covers the same physical extent with voxel centers shifted inward.
  Eigen::Vector3d old_center0 = affine.block<3, 1>(0, 3);
  Eigen::Vector3d corner = old_center0 - dir * Eigen::Vector3d(spacing[0] / 2, spacing[1] / 2, spacing[2] / 2);
  out.affine.block<3, 1>(0, 3) = corner + dir * Eigen::Vector3d(s / 2, s / 2, s / 2);
  return out;
}

GridSpec GridSpec::unit(std::array<int, 3> dims) {
  GridSpec g;
  g.dims = dims;
  return g;
}

void Volume::validate() const {
  grid.validate();
  if (data.size() != grid.voxel_count())
    fail(ErrorCode::Argument, "Volume: data length does not match dims");
  for (float v : data)
    if (!std::isfinite(v)) fail(ErrorCode::Data, "Volume: non-finite intensity");
}

void LabelMask::validate() const {
  grid.validate();
  if (data.size() != grid.voxel_count())
    fail(ErrorCode::Argument, "LabelMask: data length does not match dims");
}

std::size_t LabelMask::count_nonzero() const {
  return static_cast<std::size_t>(
      std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

namespace {

// Shared corner/fraction setup. Returns false when the coordinate is outside
// [0, dim-1]; on the upper boundary the last cell is used with fraction 1 so
// the stored edge value is reproduced exactly.
inline bool lerp_setup(double c, int dim, int& i0, double& f) {
  if (!(c >= 0.0) || c > static_cast<double>(dim - 1)) return false;
  if (dim == 1) {
    i0 = 0;
    f = 0.0;
    return true;
  }
  i0 = static_cast<int>(c);
  if (i0 >= dim - 1) {
    i0 = dim - 2;
    f = 1.0;
  } else {
    f = c - static_cast<double>(i0);
  }
  return true;
}

}  // namespace

double sample_trilinear(const Volume& vol, double x, double y, double z) {
  const auto& d = vol.grid.dims;
  int x0, y0, z0;
  double fx, fy, fz;
  if (!lerp_setup(x, d[0], x0, fx) || !lerp_setup(y, d[1], y0, fy) || !lerp_setup(z, d[2], z0, fz))
    return 0.0;
  const int x1 = d[0] == 1 ? x0 : x0 + 1;
  const int y1 = d[1] == 1 ? y0 : y0 + 1;
  const int z1 = d[2] == 1 ? z0 : z0 + 1;
  const double c000 = vol.at(x0, y0, z0), c100 = vol.at(x1, y0, z0);
  const double c010 = vol.at(x0, y1, z0), c110 = vol.at(x1, y1, z0);
  const double c001 = vol.at(x0, y0, z1), c101 = vol.at(x1, y0, z1);
  const double c011 = vol.at(x0, y1, z1), c111 = vol.at(x1, y1, z1);
  const double c00 = c000 + (c100 - c000) * fx;
  const double c10 = c010 + (c110 - c010) * fx;
  const double c01 = c001 + (c101 - c001) * fx;
  const double c11 = c011 + (c111 - c011) * fx;
  const double c0 = c00 + (c10 - c00) * fy;
  const double c1 = c01 + (c11 - c01) * fy;
  return c0 + (c1 - c0) * fz;
}

double sample_trilinear_grad(const Volume& vol, double x, double y, double z,
                             Eigen::Vector3d& grad) {
  grad.setZero();
  const auto& d = vol.grid.dims;
  int x0, y0, z0;
  double fx, fy, fz;
  if (!lerp_setup(x, d[0], x0, fx) || !lerp_setup(y, d[1], y0, fy) || !lerp_setup(z, d[2], z0, fz))
    return 0.0;
  const int x1 = d[0] == 1 ? x0 : x0 + 1;
  const int y1 = d[1] == 1 ? y0 : y0 + 1;
  const int z1 = d[2] == 1 ? z0 : z0 + 1;
  const double c000 = vol.at(x0, y0, z0), c100 = vol.at(x1, y0, z0);
  const double c010 = vol.at(x0, y1, z0), c110 = vol.at(x1, y1, z0);
  const double c001 = vol.at(x0, y0, z1), c101 = vol.at(x1, y0, z1);
  const double c011 = vol.at(x0, y1, z1), c111 = vol.at(x1, y1, z1);
  const double gx = 1 - fx, gy = 1 - fy, gz = 1 - fz;
  grad[0] = gy * gz * (c100 - c000) + fy * gz * (c110 - c010) + gy * fz * (c101 - c001) +
            fy * fz * (c111 - c011);
  grad[1] = gx * gz * (c010 - c000) + fx * gz * (c110 - c100) + gx * fz * (c011 - c001) +
            fx * fz * (c111 - c101);
  grad[2] = gx * gy * (c001 - c000) + fx * gy * (c101 - c100) + gx * fy * (c011 - c010) +
            fx * fy * (c111 - c110);
  const double c00 = c000 + (c100 - c000) * fx;
  const double c10 = c010 + (c110 - c010) * fx;
  const double c01 = c001 + (c101 - c001) * fx;
  const double c11 = c011 + (c111 - c011) * fx;
  const double c0 = c00 + (c10 - c00) * fy;
  const double c1 = c01 + (c11 - c01) * fy;
  return c0 + (c1 - c0) * fz;
}

std::uint8_t sample_nearest(const std::vector<std::uint8_t>& data, const GridSpec& grid, double x,
                            double y, double z) {
  const int ix = static_cast<int>(std::floor(x + 0.5));
  const int iy = static_cast<int>(std::floor(y + 0.5));
  const int iz = static_cast<int>(std::floor(z + 0.5));
  if (!grid.in_bounds(ix, iy, iz)) return 0;
  return data[grid.index(ix, iy, iz)];
}

std::uint8_t sample_nearest(const LabelMask& mask, double x, double y, double z) {
  return sample_nearest(mask.data, mask.grid, x, y, z);
}

namespace {

template <typename Src, typename Out, typename SampleFn>
void resample_kernel(const Src& src, const GridSpec& target, Out& out, ExecPolicy policy,
                     SampleFn&& sample) {
  // Compose target-voxel -> world -> source-voxel into a single affine; when
  // source and target geometry coincide, snap to the exact identity so the
  // identity resample reproduces the input bit for bit.
  Eigen::Matrix4d m = src.grid.affine.inverse() * target.affine;
  if ((m - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-10) m.setIdentity();
  const Eigen::Matrix3d r = m.block<3, 3>(0, 0);
  const Eigen::Vector3d t = m.block<3, 1>(0, 3);
  const int nx = target.dims[0], ny = target.dims[1], nz = target.dims[2];
  const std::int64_t n_lines = static_cast<std::int64_t>(ny) * nz;

  auto line = [&](std::int64_t l) {
    const int z = static_cast<int>(l / ny);
    const int y = static_cast<int>(l % ny);
    std::size_t o = target.index(0, y, z);
    for (int x = 0; x < nx; ++x, ++o) {
      const Eigen::Vector3d p = r * Eigen::Vector3d(x, y, z) + t;
      out.data[o] = sample(p[0], p[1], p[2]);
    }
  };

  if (policy == ExecPolicy::Serial) {
    for (std::int64_t l = 0; l < n_lines; ++l) line(l);
  } else {
#pragma omp parallel for schedule(static)
    for (std::int64_t l = 0; l < n_lines; ++l) line(l);
  }
}

}  // namespace

Volume resample_to_grid(const Volume& vol, const GridSpec& target, Interp mode,
                        ExecPolicy policy) {
  vol.grid.validate();
  target.validate();
  Volume out = Volume::zeros(target);
  if (mode == Interp::Trilinear) {
    resample_kernel(vol, target, out, policy, [&](double x, double y, double z) {
      return static_cast<float>(sample_trilinear(vol, x, y, z));
    });
  } else {
    // Nearest on a float volume: reuse the rounding rule, fill 0.
    resample_kernel(vol, target, out, policy, [&](double x, double y, double z) -> float {
      const int ix = static_cast<int>(std::floor(x + 0.5));
      const int iy = static_cast<int>(std::floor(y + 0.5));
      const int iz = static_cast<int>(std::floor(z + 0.5));
      if (!vol.grid.in_bounds(ix, iy, iz)) return 0.0f;
      return vol.at(ix, iy, iz);
    });
  }
  return out;
}

LabelMask resample_to_grid(const LabelMask& mask, const GridSpec& target, ExecPolicy policy) {
  mask.grid.validate();
  target.validate();
  LabelMask out = LabelMask::zeros(target);
  resample_kernel(mask, target, out, policy, [&](double x, double y, double z) {
    return sample_nearest(mask, x, y, z);
  });
  return out;
}

Volume zscore_normalize(const Volume& vol, const LabelMask* region) {
  if (region && !region->grid.same_geometry(vol.grid))
    fail(ErrorCode::Argument, "zscore_normalize: region geometry mismatch");
  double sum = 0.0, sum2 = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    if (region && region->data[i] == 0) continue;
    const double v = vol.data[i];
    sum += v;
    sum2 += v * v;
    ++n;
  }
  if (n == 0) fail(ErrorCode::Degenerate, "zscore_normalize: empty region");
  const double mean = sum / static_cast<double>(n);
  const double var = sum2 / static_cast<double>(n) - mean * mean;
  if (!(var > 0.0)) fail(ErrorCode::Degenerate, "zscore_normalize: zero intensity variance");
  const double inv_std = 1.0 / std::sqrt(var);
  Volume out = vol;
  for (auto& v : out.data) v = static_cast<float>((v - mean) * inv_std);
  return out;
}

float otsu_threshold(const Volume& vol) {
  const auto [mn_it, mx_it] = std::minmax_element(vol.data.begin(), vol.data.end());
  const double mn = *mn_it, mx = *mx_it;
  if (!(mx > mn)) fail(ErrorCode::Degenerate, "otsu_threshold: constant volume");
  constexpr int kBins = 256;
  std::array<std::int64_t, kBins> hist{};
  const double scale = kBins / (mx - mn);
  for (float v : vol.data) {
    int b = static_cast<int>((v - mn) * scale);
    hist[std::clamp(b, 0, kBins - 1)]++;
  }
  const double total = static_cast<double>(vol.data.size());
  double sum_all = 0.0;
  for (int i = 0; i < kBins; ++i) sum_all += i * static_cast<double>(hist[i]);
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int i = 0; i < kBins - 1; ++i) {
    w0 += static_cast<double>(hist[i]);
    if (w0 == 0) continue;
    const double w1 = total - w0;
    if (w1 == 0) break;
    sum0 += i * static_cast<double>(hist[i]);
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = i;
    }
  }
  return static_cast<float>(mn + (best_bin + 1) / scale);
}

namespace {

// Largest 6-connected foreground component, iterative flood fill.
void keep_largest_component(LabelMask& m) {
  const auto& d = m.grid.dims;
  const std::size_t n = m.data.size();
  std::vector<std::int32_t> comp(n, -1);
  std::vector<std::size_t> stack;
  std::int32_t n_comp = 0;
  std::size_t best_size = 0;
  std::int32_t best_comp = -1;
  const std::int64_t stride[3] = {1, d[0], static_cast<std::int64_t>(d[0]) * d[1]};
  for (std::size_t s = 0; s < n; ++s) {
    if (m.data[s] == 0 || comp[s] >= 0) continue;
    const std::int32_t id = n_comp++;
    std::size_t size = 0;
    stack.push_back(s);
    comp[s] = id;
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      ++size;
      const int x = static_cast<int>(cur % d[0]);
      const int y = static_cast<int>((cur / d[0]) % d[1]);
      const int z = static_cast<int>(cur / (static_cast<std::size_t>(d[0]) * d[1]));
      const int coord[3] = {x, y, z};
      for (int ax = 0; ax < 3; ++ax) {
        for (int dir = -1; dir <= 1; dir += 2) {
          const int c = coord[ax] + dir;
          if (c < 0 || c >= d[ax]) continue;
          const std::size_t nb = cur + static_cast<std::size_t>(dir * stride[ax]);
          if (m.data[nb] != 0 && comp[nb] < 0) {
            comp[nb] = id;
            stack.push_back(nb);
          }
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best_comp = id;
    }
  }
  for (std::size_t i = 0; i < n; ++i) m.data[i] = (m.data[i] != 0 && comp[i] == best_comp) ? 1 : 0;
}

std::vector<std::array<int, 3>> ball_offsets(int radius) {
  std::vector<std::array<int, 3>> offs;
  const int r2 = radius * radius;
  for (int dz = -radius; dz <= radius; ++dz)
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx)
        if (dx * dx + dy * dy + dz * dz <= r2) offs.push_back({dx, dy, dz});
  return offs;
}

LabelMask morph(const LabelMask& m, const std::vector<std::array<int, 3>>& offs, bool dilate) {
  const auto& d = m.grid.dims;
  LabelMask out = LabelMask::zeros(m.grid);
  const std::int64_t nvox = static_cast<std::int64_t>(m.data.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < nvox; ++i) {
    const int x = static_cast<int>(i % d[0]);
    const int y = static_cast<int>((i / d[0]) % d[1]);
    const int z = static_cast<int>(i / (static_cast<std::int64_t>(d[0]) * d[1]));
    bool hit = !dilate;
    for (const auto& o : offs) {
      const int xx = x + o[0], yy = y + o[1], zz = z + o[2];
      const bool v = m.grid.in_bounds(xx, yy, zz) && m.at(xx, yy, zz) != 0;
      if (dilate && v) {
        hit = true;
        break;
      }
      if (!dilate && !v) {
        hit = false;
        break;
      }
    }
    out.data[i] = hit ? 1 : 0;
  }
  return out;
}

}  // namespace

LabelMask estimate_brain_mask(const Volume& vol) {
  bool any_fg = std::any_of(vol.data.begin(), vol.data.end(), [](float v) { return v != 0.0f; });
  if (!any_fg) fail(ErrorCode::Degenerate, "estimate_brain_mask: empty foreground");
  const float thr = otsu_threshold(vol);
  LabelMask m = LabelMask::zeros(vol.grid);
  for (std::size_t i = 0; i < vol.data.size(); ++i) m.data[i] = vol.data[i] > thr ? 1 : 0;
  if (m.count_nonzero() == 0) fail(ErrorCode::Degenerate, "estimate_brain_mask: empty threshold mask");
  keep_largest_component(m);
  static const auto offs = ball_offsets(2);
  m = morph(morph(m, offs, true), offs, false);  // closing
  keep_largest_component(m);
  return m;
}

}  // namespace voxaug
