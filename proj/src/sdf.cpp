#include "voxaug/sdf.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace voxaug {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared-distance transform (lower envelope of parabolas), Felzenszwalb
// & Huttenlocher. f holds squared distances sampled along a line; d receives
// min_j f[j] + (i-j)^2.
void dt_1d(const double* f, int n, double* d, int* v, double* z) {
  int k = -1;  // rightmost parabola of the envelope; infinite ones are skipped
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s = 0.0;
    while (k >= 0) {
      const int p = v[k];
      s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -kInf : s;
    z[k + 1] = kInf;
  }
  if (k < 0) {  // line contains no finite source
    for (int q = 0; q < n; ++q) d[q] = kInf;
    return;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

// Squared Euclidean distance to the nearest voxel where feature(i) is true.
std::vector<double> squared_edt(const GridSpec& grid, const std::vector<std::uint8_t>& data,
                                bool feature_value, ExecPolicy policy) {
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  std::vector<double> dist(grid.voxel_count());
  for (std::size_t i = 0; i < dist.size(); ++i)
    dist[i] = (data[i] != 0) == feature_value ? 0.0 : kInf;

  struct Scratch {
    std::vector<double> f, d, z;
    std::vector<int> v;
    void ensure(int n) {
      f.resize(n);
      d.resize(n);
      v.resize(n);
      z.resize(n + 1);
    }
  };

  // Pass along x: lines indexed by (y,z).
  const std::int64_t n_yz = static_cast<std::int64_t>(ny) * nz;
  auto pass_x = [&](std::int64_t l, Scratch& s) {
    s.ensure(nx);
    const int z = static_cast<int>(l / ny), y = static_cast<int>(l % ny);
    const std::size_t base = grid.index(0, y, z);
    for (int x = 0; x < nx; ++x) s.f[x] = dist[base + x];
    dt_1d(s.f.data(), nx, s.d.data(), s.v.data(), s.z.data());
    for (int x = 0; x < nx; ++x) dist[base + x] = s.d[x];
  };
  // Pass along y: lines indexed by (x,z).
  const std::int64_t n_xz = static_cast<std::int64_t>(nx) * nz;
  auto pass_y = [&](std::int64_t l, Scratch& s) {
    s.ensure(ny);
    const int z = static_cast<int>(l / nx), x = static_cast<int>(l % nx);
    for (int y = 0; y < ny; ++y) s.f[y] = dist[grid.index(x, y, z)];
    dt_1d(s.f.data(), ny, s.d.data(), s.v.data(), s.z.data());
    for (int y = 0; y < ny; ++y) dist[grid.index(x, y, z)] = s.d[y];
  };
  // Pass along z: lines indexed by (x,y).
  const std::int64_t n_xy = static_cast<std::int64_t>(nx) * ny;
  auto pass_z = [&](std::int64_t l, Scratch& s) {
    s.ensure(nz);
    const int y = static_cast<int>(l / nx), x = static_cast<int>(l % nx);
    for (int z = 0; z < nz; ++z) s.f[z] = dist[grid.index(x, y, z)];
    dt_1d(s.f.data(), nz, s.d.data(), s.v.data(), s.z.data());
    for (int z = 0; z < nz; ++z) dist[grid.index(x, y, z)] = s.d[z];
  };

  auto run = [&](std::int64_t n_lines, auto&& pass) {
    if (policy == ExecPolicy::Serial) {
      Scratch s;
      for (std::int64_t l = 0; l < n_lines; ++l) pass(l, s);
    } else {
#pragma omp parallel
      {
        Scratch s;
#pragma omp for schedule(static)
        for (std::int64_t l = 0; l < n_lines; ++l) pass(l, s);
      }
    }
  };
  run(n_yz, pass_x);
  run(n_xz, pass_y);
  run(n_xy, pass_z);
  return dist;
}

}  // namespace

SignedDistanceField signed_distance(const LabelMask& mask, ExecPolicy policy) {
  const std::size_t fg = mask.count_nonzero();
  if (fg == 0) fail(ErrorCode::Degenerate, "signed_distance: all-background mask");
  if (fg == mask.data.size()) fail(ErrorCode::Degenerate, "signed_distance: all-foreground mask");

  const std::vector<double> d2_bg = squared_edt(mask.grid, mask.data, false, policy);
  const std::vector<double> d2_fg = squared_edt(mask.grid, mask.data, true, policy);

  SignedDistanceField sdf;
  sdf.grid = mask.grid;
  sdf.values.resize(mask.data.size());
  const std::int64_t n = static_cast<std::int64_t>(mask.data.size());
  auto body = [&](std::int64_t i) {
    sdf.values[i] = mask.data[i] != 0 ? std::sqrt(d2_bg[i]) : -std::sqrt(d2_fg[i]);
  };
  if (policy == ExecPolicy::Serial) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
  } else {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) body(i);
  }
  return sdf;
}

AlphaMap alpha_map(const SignedDistanceField& sdf, double tau, ExecPolicy policy) {
  if (!(tau > 0.0)) fail(ErrorCode::Argument, "alpha_map: tau must be positive");
  AlphaMap a;
  a.grid = sdf.grid;
  a.bandwidth = tau;
  a.weights.resize(sdf.values.size());
  const std::int64_t n = static_cast<std::int64_t>(sdf.values.size());
  auto body = [&](std::int64_t i) {
    const double w = sdf.values[i] / tau;
    a.weights[i] = static_cast<float>(w <= 0.0 ? 0.0 : (w >= 1.0 ? 1.0 : w));
  };
  if (policy == ExecPolicy::Serial) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
  } else {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) body(i);
  }
  return a;
}

Volume gaussian_blur(const Volume& vol, double sigma, ExecPolicy policy) {
  if (!(sigma > 0.0)) fail(ErrorCode::Argument, "gaussian_blur: sigma must be positive");
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i)
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));

  const auto& dims = vol.grid.dims;
  Volume cur = vol;
  Volume next = Volume::zeros(vol.grid);

  for (int axis = 0; axis < 3; ++axis) {
    const int n_axis = dims[axis];
    const int a1 = axis == 0 ? 1 : 0;
    const int a2 = axis == 2 ? 1 : 2;
    const std::int64_t n_lines = static_cast<std::int64_t>(dims[a1]) * dims[a2];
    const std::int64_t stride =
        axis == 0 ? 1 : (axis == 1 ? dims[0] : static_cast<std::int64_t>(dims[0]) * dims[1]);
    auto line = [&](std::int64_t l) {
      int coord[3] = {0, 0, 0};
      coord[a1] = static_cast<int>(l % dims[a1]);
      coord[a2] = static_cast<int>(l / dims[a1]);
      const std::size_t base = vol.grid.index(coord[0], coord[1], coord[2]);
      for (int i = 0; i < n_axis; ++i) {
        double acc = 0.0, wsum = 0.0;
        const int lo = std::max(-radius, -i);
        const int hi = std::min(radius, n_axis - 1 - i);
        for (int k = lo; k <= hi; ++k) {
          const double w = kernel[k + radius];
          acc += w * cur.data[base + static_cast<std::size_t>((i + k) * stride)];
          wsum += w;
        }
        next.data[base + static_cast<std::size_t>(i * stride)] = static_cast<float>(acc / wsum);
      }
    };
    if (policy == ExecPolicy::Serial) {
      for (std::int64_t l = 0; l < n_lines; ++l) line(l);
    } else {
#pragma omp parallel for schedule(static)
      for (std::int64_t l = 0; l < n_lines; ++l) line(l);
    }
    std::swap(cur, next);
  }
  return cur;
}

}  // namespace voxaug
