#pragma once

#include "voxaug/inr.hpp"
#include "voxaug/rng.hpp"
#include "voxaug/volume.hpp"

namespace voxaug {

struct RegistrationConfig {
  int mapping_dim = 128;  // L
  double sigma_b = 3.0;
  std::vector<int> hidden_sizes = {128, 128, 128};
  int steps = 8;            // K Euler steps
  double reg_weight = 0.01;  // lambda
  int iterations = 2000;
  int batch_size = 4096;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  enum class Similarity { Mse, Ncc };
  Similarity similarity = Similarity::Mse;

  void validate() const;
};

// One iteration's collocation sample: target-grid voxel positions, the
// target intensities there, and per-point times for the velocity-Jacobian
// regularizer stencils. Pure data, so losses are exactly reproducible.
struct TrainBatch {
  Eigen::Matrix<double, 3, Eigen::Dynamic> points;  // voxel coords
  Eigen::VectorXd target_values;
  Eigen::VectorXd reg_times;
};

TrainBatch make_train_batch(const Volume& target, int batch_size, Rng& rng);

struct ParamGrads {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

struct LossValue {
  double total = 0.0;
  double similarity = 0.0;
  double regularizer = 0.0;  // unweighted
};

// Loss at a fixed batch: L_sim(I_src o Phi, I_tgt) + lambda * L_reg(v),
// where Phi comes from K Euler steps through the model and L_reg is the
// mean squared central-difference spatial Jacobian of the velocity at the
// collocation points. Exposed separately from the trainer so the
// finite-difference gradient oracle can call it.
LossValue registration_loss(const VelocityFieldModel& model, const Volume& src,
                            const TrainBatch& batch, const RegistrationConfig& cfg);

// Same loss plus analytic parameter gradients via backpropagation through
// the unrolled integration, the trilinear sampler and the stencils.
LossValue registration_loss_grad(const VelocityFieldModel& model, const Volume& src,
                                 const TrainBatch& batch, const RegistrationConfig& cfg,
                                 ParamGrads& grads);

struct TrainResult {
  VelocityFieldModel model;
  std::vector<double> loss_history;  // per-iteration batch loss
  double initial_loss = 0.0;
  double final_loss = 0.0;  // best recorded; never above initial_loss
};

// Adam-driven stochastic optimization of the velocity network. Collocation
// batches are reseeded per iteration from cfg.seed; the best-loss parameter
// snapshot is returned. Throws Training with the iteration index if the
// loss goes non-finite.
TrainResult train_registration(const Volume& src, const Volume& tgt,
                               const RegistrationConfig& cfg);

// Sidecar metadata (grid geometry, config, final loss) next to a saved model.
void write_model_sidecar(const std::string& model_path, const GridSpec& grid,
                         const RegistrationConfig& cfg, double final_loss);

}  // namespace voxaug
