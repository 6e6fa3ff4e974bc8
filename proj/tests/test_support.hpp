#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "voxaug/rng.hpp"
#include "voxaug/volume.hpp"

namespace voxaug::testing {

inline Volume random_volume(std::array<int, 3> dims, std::uint64_t seed, float lo = 0.0f,
                            float hi = 1.0f) {
  Volume v = Volume::zeros(GridSpec::unit(dims));
  Rng rng(seed);
  for (auto& x : v.data) x = lo + (hi - lo) * static_cast<float>(rng.uniform());
  return v;
}

inline LabelMask random_mask(std::array<int, 3> dims, std::uint64_t seed, double p = 0.5) {
  LabelMask m = LabelMask::zeros(GridSpec::unit(dims));
  Rng rng(seed);
  for (auto& x : m.data) x = rng.uniform() < p ? 1 : 0;
  return m;
}

// Smooth positive bump: a * exp(-|x-c|^2 / (2 s^2)).
inline Volume gaussian_blob(std::array<int, 3> dims, Eigen::Vector3d center, double s,
                            double amplitude = 100.0) {
  Volume v = Volume::zeros(GridSpec::unit(dims));
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) {
        const double d2 = (Eigen::Vector3d(x, y, z) - center).squaredNorm();
        v.at(x, y, z) = static_cast<float>(amplitude * std::exp(-d2 / (2.0 * s * s)));
      }
  return v;
}

inline LabelMask sphere_mask(std::array<int, 3> dims, Eigen::Vector3d center, double radius) {
  LabelMask m = LabelMask::zeros(GridSpec::unit(dims));
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x)
        m.at(x, y, z) =
            (Eigen::Vector3d(x, y, z) - center).squaredNorm() <= radius * radius ? 1 : 0;
  return m;
}

// Fresh scratch directory under the build tree.
inline std::string scratch_dir(const std::string& name) {
  const std::string dir = "voxaug_test_scratch/" + name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace voxaug::testing
