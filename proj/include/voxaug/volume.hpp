#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <vector>

#include "voxaug/common.hpp"

namespace voxaug {

// Geometry of a regular 3D grid: voxel counts, physical spacing (mm) and the
// 4x4 voxel-index -> world map. Voxel (0,0,0) sits at the affine's
// translation column; indices address voxel centers. Data layout is x-fastest:
// linear = x + nx*(y + ny*z).
struct GridSpec {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * z);
  }
  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
  }
  Eigen::Vector3d voxel_to_world(const Eigen::Vector3d& v) const;
  Eigen::Vector3d world_to_voxel(const Eigen::Vector3d& w) const;

  bool same_geometry(const GridSpec& o, double tol = 1e-6) const;
  void validate() const;  // throws Error on violated invariants

  // Grid with the given isotropic spacing covering the same world extent,
  // same orientation and corner. Used by the 1 mm preprocessing step.
  GridSpec resampled_iso(double new_spacing_mm) const;

  static GridSpec unit(std::array<int, 3> dims);  // identity affine, 1 mm spacing
};

struct Volume {
  GridSpec grid;
  std::vector<float> data;

  float& at(int x, int y, int z) { return data[grid.index(x, y, z)]; }
  float at(int x, int y, int z) const { return data[grid.index(x, y, z)]; }
  void validate() const;  // geometry + size + all values finite

  static Volume zeros(const GridSpec& g) { return Volume{g, std::vector<float>(g.voxel_count(), 0.0f)}; }
};

struct LabelMask {
  GridSpec grid;
  std::vector<std::uint8_t> data;

  std::uint8_t& at(int x, int y, int z) { return data[grid.index(x, y, z)]; }
  std::uint8_t at(int x, int y, int z) const { return data[grid.index(x, y, z)]; }
  void validate() const;
  std::size_t count_nonzero() const;

  static LabelMask zeros(const GridSpec& g) {
    return LabelMask{g, std::vector<std::uint8_t>(g.voxel_count(), 0)};
  }
};

enum class Interp { Trilinear, Nearest };

// Trilinear blend of the 8 enclosing voxels at continuous voxel coordinate
// (x,y,z); any coordinate outside [0, dim-1] returns the fill value 0.
// At integer coordinates the stored value is returned exactly.
double sample_trilinear(const Volume& vol, double x, double y, double z);

// Same interpolation plus the gradient of the sampled value with respect to
// the coordinate (zero outside the support). Used by registration training.
double sample_trilinear_grad(const Volume& vol, double x, double y, double z,
                             Eigen::Vector3d& grad);

// Rounds each coordinate half-up (towards +inf); indices outside the grid
// give label 0.
std::uint8_t sample_nearest(const LabelMask& mask, double x, double y, double z);
std::uint8_t sample_nearest(const std::vector<std::uint8_t>& data, const GridSpec& grid, double x,
                            double y, double z);

// Resamples vol onto the target grid: every output voxel takes the value of
// the input at the world position of the output voxel center.
Volume resample_to_grid(const Volume& vol, const GridSpec& target, Interp mode,
                        ExecPolicy policy = ExecPolicy::Parallel);
LabelMask resample_to_grid(const LabelMask& mask, const GridSpec& target,
                           ExecPolicy policy = ExecPolicy::Parallel);

// (vol - mean) / std with the statistics taken over `region` (whole volume
// when null); the transform is applied to every voxel. Throws Degenerate on
// zero variance or an empty region.
Volume zscore_normalize(const Volume& vol, const LabelMask* region = nullptr);

// Heuristic brain mask: Otsu threshold, largest 6-connected component,
// morphological closing with a radius-2 ball, largest component again.
// Stand-in only; externally supplied masks take precedence everywhere.
LabelMask estimate_brain_mask(const Volume& vol);

// Otsu threshold over a 256-bin histogram of [min, max]. Exposed for tests.
float otsu_threshold(const Volume& vol);

}  // namespace voxaug
