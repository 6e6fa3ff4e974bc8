#include "voxaug/rigid.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

#include "voxaug/mutual_info.hpp"

namespace voxaug {

Eigen::Matrix3d RigidTransform::rotation_matrix() const {
  // Z applied first, then Y, then X: R = Rx * Ry * Rz.
  return (Eigen::AngleAxisd(rotation[0], Eigen::Vector3d::UnitX()) *
          Eigen::AngleAxisd(rotation[1], Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(rotation[2], Eigen::Vector3d::UnitZ()))
      .toRotationMatrix();
}

Eigen::Matrix4d RigidTransform::matrix() const {
  const Eigen::Matrix3d r = rotation_matrix();
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = r;
  m.block<3, 1>(0, 3) = center + translation - r * center;
  return m;
}

RigidTransform RigidTransform::inverse() const {
  const Eigen::Matrix3d rinv = rotation_matrix().transpose();
  RigidTransform out;
  out.rotation = rinv.eulerAngles(0, 1, 2);
  out.center = center;
  out.translation = -(rinv * translation);
  return out;
}

void write_transform_text(const RigidTransform& t, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail(ErrorCode::Io, "cannot open for writing: " + path);
  const Eigen::Matrix4d m = t.matrix();
  bool ok = true;
  for (int r = 0; r < 4; ++r)
    ok = ok && std::fprintf(f, "%.12e %.12e %.12e %.12e\n", m(r, 0), m(r, 1), m(r, 2), m(r, 3)) > 0;
  if (std::fclose(f) != 0 || !ok) fail(ErrorCode::Io, "write failed: " + path);
}

namespace {

template <typename Img, typename SampleFn>
void warp_rigid(const Img& src, const Eigen::Matrix4d& inv, const GridSpec& target, Img& out,
                ExecPolicy policy, SampleFn&& sample) {
  const Eigen::Matrix4d m = src.grid.affine.inverse() * inv * target.affine;
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
      out.data[o] = sample(p);
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

Volume apply_rigid(const Volume& vol, const RigidTransform& t, const GridSpec& target,
                   ExecPolicy policy) {
  Volume out = Volume::zeros(target);
  const Eigen::Matrix4d inv = t.matrix().inverse();
  warp_rigid(vol, inv, target, out, policy, [&](const Eigen::Vector3d& p) {
    return static_cast<float>(sample_trilinear(vol, p[0], p[1], p[2]));
  });
  return out;
}

LabelMask apply_rigid(const LabelMask& mask, const RigidTransform& t, const GridSpec& target,
                      ExecPolicy policy) {
  LabelMask out = LabelMask::zeros(target);
  const Eigen::Matrix4d inv = t.matrix().inverse();
  warp_rigid(mask, inv, target, out, policy, [&](const Eigen::Vector3d& p) {
    return sample_nearest(mask, p[0], p[1], p[2]);
  });
  return out;
}

namespace {

struct Level {
  Volume fixed;
  LabelMask region;
};

Level make_level(const Volume& fixed, const LabelMask& region, int factor) {
  if (factor == 1) return {fixed, region};
  GridSpec g = fixed.grid;
  for (int a = 0; a < 3; ++a) {
    g.dims[a] = std::max(2, fixed.grid.dims[a] / factor);
    g.spacing[a] = fixed.grid.spacing[a] * factor;
    g.affine.block<3, 1>(0, a) *= factor;
  }
  return {resample_to_grid(fixed, g, Interp::Trilinear), resample_to_grid(region, g)};
}

}  // namespace

RigidResult register_rigid(const Volume& moving, const Volume& fixed, const LabelMask& fixed_region,
                           const RigidOptions& opts) {
  if (!fixed.grid.same_geometry(fixed_region.grid))
    fail(ErrorCode::Argument, "register_rigid: fixed/region geometry mismatch");
  if (fixed_region.count_nonzero() == 0)
    fail(ErrorCode::Argument, "register_rigid: empty fixed region");

  const Eigen::Vector3d center = fixed.grid.voxel_to_world(Eigen::Vector3d(
      (fixed.grid.dims[0] - 1) / 2.0, (fixed.grid.dims[1] - 1) / 2.0,
      (fixed.grid.dims[2] - 1) / 2.0));

  RigidTransform cur = RigidTransform::identity();
  cur.center = center;

  auto mi_at = [&](const RigidTransform& t, const Level& lvl) {
    const Volume warped = apply_rigid(moving, t, lvl.fixed.grid, ExecPolicy::Parallel);
    return mutual_information(lvl.fixed, warped, lvl.region, opts.mi_bins);
  };

  for (int factor : opts.pyramid_factors) {
    const Level lvl = make_level(fixed, fixed_region, factor);
    if (lvl.region.count_nonzero() == 0) continue;
    double best = mi_at(cur, lvl);
    double step_mm = opts.initial_step_mm;
    double step_rad = opts.initial_step_rad;
    int evals = 0;
    const int max_evals = 4000;
    while ((step_mm >= opts.min_step_mm || step_rad >= opts.min_step_rad) && evals < max_evals) {
      bool improved = false;
      for (int p = 0; p < 6; ++p) {
        const bool is_trans = p < 3;
        const double step = is_trans ? step_mm : step_rad;
        if (step < (is_trans ? opts.min_step_mm : opts.min_step_rad)) continue;
        auto param = [&](RigidTransform& t) -> double& {
          return is_trans ? t.translation[p] : t.rotation[p - 3];
        };
        for (int dir = 1; dir >= -1; dir -= 2) {
          RigidTransform trial = cur;
          param(trial) += dir * step;
          double mi = mi_at(trial, lvl);
          ++evals;
          bool moved = false;
          while (mi > best && evals < max_evals) {  // ride the ascent direction
            best = mi;
            cur = trial;
            moved = true;
            improved = true;
            param(trial) += dir * step;
            mi = mi_at(trial, lvl);
            ++evals;
          }
          if (moved) break;  // direction exhausted; next parameter
        }
      }
      if (!improved) {
        step_mm /= 2.0;
        step_rad /= 2.0;
      }
    }
  }

  // Final verdict at full resolution; stagnation falls back to identity.
  const Level full{fixed, fixed_region};
  RigidTransform ident = RigidTransform::identity();
  ident.center = center;
  RigidResult result;
  result.mi_identity = mi_at(ident, full);
  result.mi_final = mi_at(cur, full);
  if (result.mi_final >= result.mi_identity) {
    result.transform = cur;
    result.improved = result.mi_final > result.mi_identity;
  } else {
    result.transform = ident;
    result.mi_final = result.mi_identity;
    result.improved = false;
  }
  return result;
}

}  // namespace voxaug
