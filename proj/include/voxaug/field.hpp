#pragma once

#include <utility>

#include "voxaug/inr.hpp"
#include "voxaug/volume.hpp"

namespace voxaug {

// Convex pair of mixing weights; w2 is always derived as 1 - w1.
struct MixWeights {
  double w1 = 1.0;
  double w2 = 0.0;

  static MixWeights of(double w1) {
    if (!(w1 >= 0.0 && w1 <= 1.0)) fail(ErrorCode::Argument, "MixWeights: w1 must be in [0,1]");
    return MixWeights{w1, 1.0 - w1};
  }
};

// Per-voxel sampling map: map[3*i+a] holds the continuous source-space voxel
// coordinate of output voxel i along axis a. Identity field: map(x) == x.
struct DeformationField {
  GridSpec grid;
  std::vector<double> map;

  Eigen::Vector3d at(std::size_t voxel) const {
    return {map[3 * voxel], map[3 * voxel + 1], map[3 * voxel + 2]};
  }
  Eigen::Vector3d displacement(int x, int y, int z) const {
    const std::size_t i = grid.index(x, y, z);
    return at(i) - Eigen::Vector3d(x, y, z);
  }

  static DeformationField identity(const GridSpec& g);
};

// Explicit Euler rollout of dp/dt = v(p,t) over t in [0,1] with K steps,
// t_k = k/K. Shared by the grid kernels and the closed-form ODE tests.
template <typename VelocityFn>
inline Eigen::Vector3d euler_flow(Eigen::Vector3d p, int steps, VelocityFn&& velocity) {
  const double dt = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    const double t_k = static_cast<double>(k) / steps;
    p += velocity(p, t_k) * dt;
  }
  return p;
}

// Integrates the mixed backward velocity field w1*v1 + w2*v2 on every voxel
// of `grid`. Endpoint weights skip the unused model entirely, so w=(1,0) is
// bitwise identical to integrating model1 alone.
DeformationField integrate_mixed(const VelocityFieldModel& model1,
                                 const VelocityFieldModel& model2, MixWeights w,
                                 const GridSpec& grid, int steps,
                                 ExecPolicy policy = ExecPolicy::Parallel);

DeformationField integrate(const VelocityFieldModel& model, const GridSpec& grid, int steps,
                           ExecPolicy policy = ExecPolicy::Parallel);

// Mixed velocity at a single spacetime point, in voxel units.
Eigen::Vector3d mix_velocity(const VelocityFieldModel& model1, const VelocityFieldModel& model2,
                             MixWeights w, const Eigen::Vector3d& x_vox, double t);

// Backward warp: image through trilinear sampling, labels through nearest.
// Outputs carry the field's grid metadata.
std::pair<Volume, LabelMask> apply_deformation(const Volume& src_img, const LabelMask& src_mask,
                                               const DeformationField& field,
                                               ExecPolicy policy = ExecPolicy::Parallel);
Volume apply_deformation(const Volume& src_img, const DeformationField& field,
                         ExecPolicy policy = ExecPolicy::Parallel);

// Raw export for inspection: little-endian float32 triplets (x fastest) plus
// a JSON sidecar at path + ".json" describing the grid.
void write_deformation_raw(const DeformationField& field, const std::string& path);
DeformationField read_deformation_raw(const std::string& path);

// Fraction of interior voxels whose finite-difference Jacobian determinant
// is positive; the empirical diffeomorphism check.
double positive_jacobian_fraction(const DeformationField& field);

}  // namespace voxaug
