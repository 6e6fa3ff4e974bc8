#pragma once

#include <optional>

#include "voxaug/rigid.hpp"
#include "voxaug/sdf.hpp"
#include "voxaug/volume.hpp"

namespace voxaug {

struct InjectionConfig {
  double tau = 4.0;           // SDF transition bandwidth, voxels
  double sigma = 1.0;         // PVE blur std, voxels
  int histogram_bins = 256;
  int mi_bins = 32;
  double jitter_max_translation = 10.0;  // voxels per axis
  double jitter_max_rotation_deg = 20.0;  // per axis
  double brain_margin = 2.0;  // jittered lesion must sit this deep inside the brain
  int max_placement_attempts = 50;
  std::uint64_t seed = 0;
  RigidOptions rigid;

  void validate() const;
};

// Lesion-boundary partial-volume simulation: the background is Gaussian
// blurred only where 0 < |SDF| < tau and untouched everywhere else.
Volume pve_blur(const Volume& background, const SignedDistanceField& sdf, double tau, double sigma,
                ExecPolicy policy = ExecPolicy::Parallel);

// Alpha blending I(x) = a*lesion + (1-a)*background. Endpoint weights copy
// the corresponding input untouched.
Volume fuse(const Volume& lesion_src, const Volume& background, const AlphaMap& alpha,
            ExecPolicy policy = ExecPolicy::Parallel);

struct InjectionResult {
  Volume image;
  LabelMask mask;
  RigidTransform alignment;       // healthy -> lesion space
  Eigen::Matrix4d jitter;         // voxel-space placement perturbation
  int placement_attempts = 0;
  double mi_final = 0.0;
};

// Full Sim2Real pipeline: MI rigid alignment of the healthy background into
// the lesion's space, mask-constrained histogram matching, seeded placement
// jitter of the lesion (rejection-sampled to stay inside the brain), SDF
// alpha construction, boundary PVE blur and fusion. The output mask is the
// jittered lesion mask. `lesion_brain` overrides the heuristic brain mask.
InjectionResult inject_lesion(const Volume& lesion_img, const LabelMask& lesion_tumor,
                              const Volume& healthy, const LabelMask& healthy_brain,
                              const InjectionConfig& cfg,
                              const LabelMask* lesion_brain = nullptr);

}  // namespace voxaug
