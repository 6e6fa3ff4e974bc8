#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "voxaug/common.hpp"

namespace voxaug {

// Random sinusoidal lifting of spacetime coordinates c = (x,y,z,t):
// encode(c) = [cos(2*pi*B*c), sin(2*pi*B*c)], B an Lx4 Gaussian(0, sigma^2)
// matrix fixed at construction. Spatial coordinates are expected in
// [-1,1]^3 and t in [0,1].
struct FourierEncoding {
  Eigen::MatrixXd freq;  // L x 4
  double sigma_b = 3.0;

  int mapping_dim() const { return static_cast<int>(freq.rows()); }  // L
  int output_dim() const { return 2 * mapping_dim(); }               // 2L

  Eigen::VectorXd encode(const Eigen::Vector4d& c) const;

  // Columns of `coords` are coordinates; `out` resized to 2L x n.
  void encode_batch(const Eigen::Matrix<double, 4, Eigen::Dynamic>& coords,
                    Eigen::MatrixXd& out) const;

  static FourierEncoding sample(int mapping_dim, double sigma_b, std::uint64_t seed);
};

// Scratch buffers for single-point evaluation so hot per-voxel loops do not
// allocate. One instance per thread.
struct MlpScratch {
  Eigen::VectorXd enc;
  std::vector<Eigen::VectorXd> act;
};

// Coordinate network for the backward velocity field v(x,t): Fourier
// encoding into a rectifier MLP with a linear 3-vector output. The network
// operates in normalized coordinates and normalized velocity units;
// velocity_voxel() converts both ways so callers deal in voxel units only.
struct VelocityFieldModel {
  FourierEncoding encoding;
  std::vector<Eigen::MatrixXd> weights;  // weights[l]: fan_out x fan_in
  std::vector<Eigen::VectorXd> biases;
  std::array<int, 3> grid_dims{0, 0, 0};  // normalization convention

  std::vector<int> layer_sizes() const;
  void validate() const;

  // x_vox -> [-1,1] per axis; t passes through.
  Eigen::Vector3d normalize(const Eigen::Vector3d& x_vox) const;
  // Per-axis scale from normalized velocity to voxel velocity: (dim-1)/2.
  Eigen::Vector3d voxel_scale() const;

  // Network-native evaluation: normalized coordinate in, normalized velocity out.
  Eigen::Vector3d velocity_normalized(const Eigen::Vector4d& c, MlpScratch& scratch) const;

  // Velocity in voxel units per unit time at continuous voxel coordinate x.
  Eigen::Vector3d velocity_voxel(const Eigen::Vector3d& x_vox, double t,
                                 MlpScratch& scratch) const;
  Eigen::Vector3d velocity_voxel(const Eigen::Vector3d& x_vox, double t) const;

  bool same_convention(const VelocityFieldModel& o) const { return grid_dims == o.grid_dims; }

  // Gaussian init scaled by 1/sqrt(fan_in), zero biases, final layer scaled
  // down by 1e-4 so a fresh model starts near the identity flow.
  static VelocityFieldModel create(int mapping_dim, double sigma_b,
                                   const std::vector<int>& hidden_sizes,
                                   std::array<int, 3> grid_dims, std::uint64_t seed);

  // All-zero weights with the final bias set so the voxel-space velocity is
  // constant. Exact only when the per-axis scale round-trips in binary
  // floating point (e.g. dim-1 a power of two); tests pick such grids.
  static VelocityFieldModel constant(std::array<int, 3> grid_dims, const Eigen::Vector3d& v_vox);
};

// query_velocity as a free function mirroring the module operation.
Eigen::Vector3d query_velocity(const VelocityFieldModel& model, const Eigen::Vector3d& x_vox,
                               double t);

// Versioned binary model file: header, L, sigma_B, layer sizes, grid dims,
// then B and the parameters as little-endian float32 arrays.
void save_model(const VelocityFieldModel& model, const std::string& path);
VelocityFieldModel load_model(const std::string& path);

}  // namespace voxaug
