#pragma once

#include "voxaug/volume.hpp"

namespace voxaug {

// 6-DOF rigid transform in world coordinates: rotation by Euler angles
// (radians, applied Z then Y then X) about a fixed center, plus a
// translation in mm. matrix() realizes it as a 4x4 map moving -> fixed.
struct RigidTransform {
  Eigen::Vector3d rotation = Eigen::Vector3d::Zero();     // rx, ry, rz
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();  // mm
  Eigen::Vector3d center = Eigen::Vector3d::Zero();       // rotation center, world mm

  Eigen::Matrix3d rotation_matrix() const;
  Eigen::Matrix4d matrix() const;
  RigidTransform inverse() const;

  static RigidTransform identity() { return {}; }
};

// Plain-text 4x4 export (row-major, fixed precision) used by the CLI.
void write_transform_text(const RigidTransform& t, const std::string& path);

struct RigidResult {
  RigidTransform transform;
  double mi_final = 0.0;
  double mi_identity = 0.0;
  bool improved = false;  // false means the optimizer never beat identity
};

struct RigidOptions {
  int mi_bins = 32;
  std::vector<int> pyramid_factors = {4, 2, 1};
  int sweeps_per_level = 6;
  double initial_step_mm = 4.0;
  double initial_step_rad = 0.08;
  double min_step_mm = 0.05;
  double min_step_rad = 0.002;
};

// Resamples vol through the inverse transform onto the target grid
// (backward warping): trilinear for images, nearest for masks, fill 0.
Volume apply_rigid(const Volume& vol, const RigidTransform& t, const GridSpec& target,
                   ExecPolicy policy = ExecPolicy::Parallel);
LabelMask apply_rigid(const LabelMask& mask, const RigidTransform& t, const GridSpec& target,
                      ExecPolicy policy = ExecPolicy::Parallel);

// MI-maximizing rigid registration of `moving` to `fixed` over a coarse to
// fine pyramid with a derivative-free per-parameter line search. The MI is
// evaluated over `fixed_region`. Never throws on optimizer stagnation; the
// returned transform is identity with improved=false in that case.
RigidResult register_rigid(const Volume& moving, const Volume& fixed, const LabelMask& fixed_region,
                           const RigidOptions& opts = {});

}  // namespace voxaug
