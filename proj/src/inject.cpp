#include "voxaug/inject.hpp"

#include <cmath>
#include <numbers>

#include "voxaug/histmatch.hpp"
#include "voxaug/rng.hpp"

namespace voxaug {

void InjectionConfig::validate() const {
  if (!(tau > 0.0)) fail(ErrorCode::Argument, "InjectionConfig: tau must be > 0");
  if (!(sigma > 0.0)) fail(ErrorCode::Argument, "InjectionConfig: sigma must be > 0");
  if (histogram_bins < 8 || mi_bins < 8)
    fail(ErrorCode::Argument, "InjectionConfig: bins must be >= 8");
  if (jitter_max_translation < 0.0 || jitter_max_rotation_deg < 0.0)
    fail(ErrorCode::Argument, "InjectionConfig: jitter bounds must be non-negative");
  if (max_placement_attempts < 1)
    fail(ErrorCode::Argument, "InjectionConfig: need at least one placement attempt");
}

Volume pve_blur(const Volume& background, const SignedDistanceField& sdf, double tau, double sigma,
                ExecPolicy policy) {
  if (!background.grid.same_geometry(sdf.grid))
    fail(ErrorCode::Argument, "pve_blur: grid mismatch");
  if (!(tau > 0.0)) fail(ErrorCode::Argument, "pve_blur: tau must be positive");
  const Volume smoothed = gaussian_blur(background, sigma, policy);
  Volume out = background;
  const std::int64_t n = static_cast<std::int64_t>(out.data.size());
  auto body = [&](std::int64_t i) {
    const double a = std::abs(sdf.values[i]);
    if (a > 0.0 && a < tau) out.data[i] = smoothed.data[i];
  };
  if (policy == ExecPolicy::Serial) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
  } else {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) body(i);
  }
  return out;
}

Volume fuse(const Volume& lesion_src, const Volume& background, const AlphaMap& alpha,
            ExecPolicy policy) {
  if (!lesion_src.grid.same_geometry(background.grid) ||
      !lesion_src.grid.same_geometry(alpha.grid))
    fail(ErrorCode::Argument, "fuse: grid mismatch");
  Volume out = Volume::zeros(lesion_src.grid);
  const std::int64_t n = static_cast<std::int64_t>(out.data.size());
  auto body = [&](std::int64_t i) {
    const float a = alpha.weights[i];
    if (a == 1.0f) {
      out.data[i] = lesion_src.data[i];
    } else if (a == 0.0f) {
      out.data[i] = background.data[i];
    } else {
      out.data[i] = static_cast<float>(static_cast<double>(a) * lesion_src.data[i] +
                                       (1.0 - static_cast<double>(a)) * background.data[i]);
    }
  };
  if (policy == ExecPolicy::Serial) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
  } else {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) body(i);
  }
  return out;
}

namespace {

Eigen::Matrix4d voxel_rigid(const Eigen::Vector3d& angles_rad, const Eigen::Vector3d& t_vox,
                            const Eigen::Vector3d& center_vox) {
  const Eigen::Matrix3d r = (Eigen::AngleAxisd(angles_rad[0], Eigen::Vector3d::UnitX()) *
                             Eigen::AngleAxisd(angles_rad[1], Eigen::Vector3d::UnitY()) *
                             Eigen::AngleAxisd(angles_rad[2], Eigen::Vector3d::UnitZ()))
                                .toRotationMatrix();
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = r;
  m.block<3, 1>(0, 3) = center_vox + t_vox - r * center_vox;
  return m;
}

LabelMask warp_mask_voxel(const LabelMask& mask, const Eigen::Matrix4d& inv) {
  LabelMask out = LabelMask::zeros(mask.grid);
  const auto& d = mask.grid.dims;
  const Eigen::Matrix3d r = inv.block<3, 3>(0, 0);
  const Eigen::Vector3d t = inv.block<3, 1>(0, 3);
#pragma omp parallel for schedule(static)
  for (std::int64_t l = 0; l < static_cast<std::int64_t>(d[1]) * d[2]; ++l) {
    const int z = static_cast<int>(l / d[1]), y = static_cast<int>(l % d[1]);
    std::size_t o = mask.grid.index(0, y, z);
    for (int x = 0; x < d[0]; ++x, ++o) {
      const Eigen::Vector3d p = r * Eigen::Vector3d(x, y, z) + t;
      out.data[o] = sample_nearest(mask, p[0], p[1], p[2]);
    }
  }
  return out;
}

Volume warp_volume_voxel(const Volume& vol, const Eigen::Matrix4d& inv) {
  Volume out = Volume::zeros(vol.grid);
  const auto& d = vol.grid.dims;
  const Eigen::Matrix3d r = inv.block<3, 3>(0, 0);
  const Eigen::Vector3d t = inv.block<3, 1>(0, 3);
#pragma omp parallel for schedule(static)
  for (std::int64_t l = 0; l < static_cast<std::int64_t>(d[1]) * d[2]; ++l) {
    const int z = static_cast<int>(l / d[1]), y = static_cast<int>(l % d[1]);
    std::size_t o = vol.grid.index(0, y, z);
    for (int x = 0; x < d[0]; ++x, ++o) {
      const Eigen::Vector3d p = r * Eigen::Vector3d(x, y, z) + t;
      out.data[o] = static_cast<float>(sample_trilinear(vol, p[0], p[1], p[2]));
    }
  }
  return out;
}

}  // namespace

InjectionResult inject_lesion(const Volume& lesion_img, const LabelMask& lesion_tumor,
                              const Volume& healthy, const LabelMask& healthy_brain,
                              const InjectionConfig& cfg, const LabelMask* lesion_brain) {
  cfg.validate();
  if (!lesion_img.grid.same_geometry(lesion_tumor.grid))
    fail(ErrorCode::Argument, "inject_lesion: lesion image/mask geometry mismatch");
  if (!healthy.grid.same_geometry(healthy_brain.grid))
    fail(ErrorCode::Argument, "inject_lesion: healthy image/mask geometry mismatch");
  if (lesion_tumor.count_nonzero() == 0)
    fail(ErrorCode::Degenerate, "inject_lesion: empty lesion mask");

  const LabelMask brain_fixed = lesion_brain ? *lesion_brain : estimate_brain_mask(lesion_img);
  if (!brain_fixed.grid.same_geometry(lesion_img.grid))
    fail(ErrorCode::Argument, "inject_lesion: lesion brain mask geometry mismatch");

  // Healthy background into the lesion's anatomical frame.
  RigidOptions ropts = cfg.rigid;
  ropts.mi_bins = cfg.mi_bins;
  const RigidResult reg = register_rigid(healthy, lesion_img, brain_fixed, ropts);
  const Volume aligned = apply_rigid(healthy, reg.transform, lesion_img.grid);
  const LabelMask aligned_brain = apply_rigid(healthy_brain, reg.transform, lesion_img.grid);
  if (aligned_brain.count_nonzero() == 0)
    fail(ErrorCode::Degenerate, "inject_lesion: aligned healthy brain mask is empty");

  // Reference statistics exclude the tumor: parenchyma = brain \ tumor.
  LabelMask ref_region = brain_fixed;
  for (std::size_t i = 0; i < ref_region.data.size(); ++i)
    if (lesion_tumor.data[i] != 0) ref_region.data[i] = 0;
  const Volume matched =
      match_histogram(aligned, lesion_img, aligned_brain, ref_region, cfg.histogram_bins);

  // Seeded placement jitter, rejected until the lesion sits brain_margin
  // voxels inside the aligned brain.
  const SignedDistanceField brain_sdf = signed_distance(aligned_brain);
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  {
    double count = 0.0;
    for (int z = 0; z < lesion_tumor.grid.dims[2]; ++z)
      for (int y = 0; y < lesion_tumor.grid.dims[1]; ++y)
        for (int x = 0; x < lesion_tumor.grid.dims[0]; ++x)
          if (lesion_tumor.at(x, y, z) != 0) {
            centroid += Eigen::Vector3d(x, y, z);
            count += 1.0;
          }
    centroid /= count;
  }

  Rng rng(derive_seed(cfg.seed, "placement-jitter"));
  const double max_rad = cfg.jitter_max_rotation_deg * std::numbers::pi / 180.0;
  Eigen::Matrix4d jitter = Eigen::Matrix4d::Identity();
  LabelMask jit_mask;
  bool placed = false;
  int attempts = 0;
  for (; attempts < cfg.max_placement_attempts && !placed; ++attempts) {
    Eigen::Vector3d angles, shift;
    for (int a = 0; a < 3; ++a) {
      angles[a] = rng.uniform_in(-max_rad, max_rad);
      shift[a] = rng.uniform_in(-cfg.jitter_max_translation, cfg.jitter_max_translation);
    }
    const Eigen::Matrix4d j = voxel_rigid(angles, shift, centroid);
    LabelMask candidate = warp_mask_voxel(lesion_tumor, j.inverse());
    bool ok = candidate.count_nonzero() > 0;
    for (std::size_t i = 0; ok && i < candidate.data.size(); ++i)
      if (candidate.data[i] != 0 && brain_sdf.values[i] < cfg.brain_margin) ok = false;
    if (ok) {
      jitter = j;
      jit_mask = std::move(candidate);
      placed = true;
    }
  }
  if (!placed)
    fail(ErrorCode::Placement,
         "inject_lesion: no valid placement after " + std::to_string(attempts) + " attempts");

  const Volume jit_img = warp_volume_voxel(lesion_img, jitter.inverse());

  const SignedDistanceField sdf = signed_distance(jit_mask);
  const AlphaMap alpha = alpha_map(sdf, cfg.tau);
  const Volume prepared = pve_blur(matched, sdf, cfg.tau, cfg.sigma);

  InjectionResult result;
  result.image = fuse(jit_img, prepared, alpha);
  result.mask = std::move(jit_mask);
  result.alignment = reg.transform;
  result.jitter = jitter;
  result.placement_attempts = attempts;
  result.mi_final = reg.mi_final;
  return result;
}

}  // namespace voxaug
