#include "voxaug/train.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

namespace voxaug {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kStencilStep = 0.01;  // central-difference step, normalized coords
constexpr int kChunk = 512;            // fixed chunk width keeps reductions ordered
}  // namespace

void RegistrationConfig::validate() const {
  if (mapping_dim < 1) fail(ErrorCode::Argument, "RegistrationConfig: mapping_dim >= 1");
  if (steps < 1) fail(ErrorCode::Argument, "RegistrationConfig: steps >= 1");
  if (reg_weight < 0.0) fail(ErrorCode::Argument, "RegistrationConfig: reg_weight >= 0");
  if (iterations < 1) fail(ErrorCode::Argument, "RegistrationConfig: iterations >= 1");
  if (batch_size < 1) fail(ErrorCode::Argument, "RegistrationConfig: batch_size >= 1");
  if (!(learning_rate > 0.0)) fail(ErrorCode::Argument, "RegistrationConfig: learning_rate > 0");
  for (int h : hidden_sizes)
    if (h < 1) fail(ErrorCode::Argument, "RegistrationConfig: hidden sizes >= 1");
}

TrainBatch make_train_batch(const Volume& target, int batch_size, Rng& rng) {
  TrainBatch b;
  b.points.resize(3, batch_size);
  b.target_values.resize(batch_size);
  b.reg_times.resize(batch_size);
  const auto& g = target.grid;
  const std::uint64_t nvox = g.voxel_count();
  for (int j = 0; j < batch_size; ++j) {
    const std::uint64_t idx = rng.uniform_int(nvox);
    const int x = static_cast<int>(idx % g.dims[0]);
    const int y = static_cast<int>((idx / g.dims[0]) % g.dims[1]);
    const int z = static_cast<int>(idx / (static_cast<std::uint64_t>(g.dims[0]) * g.dims[1]));
    b.points.col(j) = Eigen::Vector3d(x, y, z);
    b.target_values[j] = target.data[idx];
    b.reg_times[j] = rng.uniform();
  }
  return b;
}

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Forward activations of one encode+MLP evaluation over a batch of columns.
struct Tape {
  Mat enc;                // 2L x m, [cos; sin]
  std::vector<Mat> acts;  // hidden activations post-rectifier
  Mat vel;                // 3 x m, normalized units
};

void forward_net(const VelocityFieldModel& model, const Eigen::Matrix<double, 4, Eigen::Dynamic>& coords,
                 Tape& tape) {
  const int L = model.encoding.mapping_dim();
  const Mat phase = kTwoPi * (model.encoding.freq * coords);
  tape.enc.resize(2 * L, coords.cols());
  tape.enc.topRows(L) = phase.array().cos();
  tape.enc.bottomRows(L) = phase.array().sin();

  const std::size_t n_layers = model.weights.size();
  tape.acts.resize(n_layers > 0 ? n_layers - 1 : 0);
  const Mat* in = &tape.enc;
  for (std::size_t l = 0; l + 1 < n_layers; ++l) {
    tape.acts[l].noalias() = model.weights[l] * (*in);
    tape.acts[l].colwise() += model.biases[l];
    tape.acts[l] = tape.acts[l].cwiseMax(0.0);
    in = &tape.acts[l];
  }
  tape.vel.noalias() = model.weights.back() * (*in);
  tape.vel.colwise() += model.biases.back();
}

// Backprop through one evaluation. g_out is dL/dvel; parameter gradients are
// accumulated into `grads`; when g_coords is non-null the gradient with
// respect to the 4D input coordinates is produced as well.
void backward_net(const VelocityFieldModel& model, const Tape& tape, const Mat& g_out,
                  ParamGrads& grads, Eigen::Matrix<double, 4, Eigen::Dynamic>* g_coords) {
  const std::size_t n_layers = model.weights.size();
  Mat g = g_out;
  for (std::size_t li = n_layers; li-- > 0;) {
    const Mat& input = li == 0 ? tape.enc : tape.acts[li - 1];
    grads.weights[li].noalias() += g * input.transpose();
    grads.biases[li] += g.rowwise().sum();
    if (li == 0 && !g_coords) return;
    Mat g_in = model.weights[li].transpose() * g;
    if (li > 0) g_in.array() *= (tape.acts[li - 1].array() > 0.0).cast<double>();
    g = std::move(g_in);
  }
  // Through the encoding: d cos(p) = -sin(p) dp, d sin(p) = cos(p) dp.
  const int L = model.encoding.mapping_dim();
  Mat g_phase = -tape.enc.bottomRows(L).cwiseProduct(g.topRows(L)) +
                tape.enc.topRows(L).cwiseProduct(g.bottomRows(L));
  g_coords->noalias() = kTwoPi * (model.encoding.freq.transpose() * g_phase);
}

ParamGrads zero_grads(const VelocityFieldModel& model) {
  ParamGrads g;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    g.weights.emplace_back(Mat::Zero(model.weights[l].rows(), model.weights[l].cols()));
    g.biases.emplace_back(Vec::Zero(model.biases[l].size()));
  }
  return g;
}

void add_grads(ParamGrads& into, const ParamGrads& from) {
  for (std::size_t l = 0; l < into.weights.size(); ++l) {
    into.weights[l] += from.weights[l];
    into.biases[l] += from.biases[l];
  }
}

void scale_grads(ParamGrads& g, double s) {
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    g.weights[l] *= s;
    g.biases[l] *= s;
  }
}

// Rolls one chunk of collocation points through the K Euler steps, samples
// the source, evaluates the regularizer stencils, and (optionally)
// backpropagates everything that does not need global batch statistics.
// `g_pred` is dL/d(sampled value) per point; for MSE it is known up front,
// for NCC a second pass supplies it after the batch statistics are known.
class ChunkWorker {
public:
  ChunkWorker(const VelocityFieldModel& model, const Volume& src, const RegistrationConfig& cfg)
      : model_(model), src_(src), cfg_(cfg), scale_(model.voxel_scale()) {}

  // Forward only; fills pred and the integration tapes.
  void forward(const TrainBatch& batch, int begin, int m) {
    m_ = m;
    const double dt = 1.0 / cfg_.steps;
    positions_.resize(cfg_.steps + 1);
    tapes_.assign(cfg_.steps, Tape{});
    positions_[0] = batch.points.middleCols(begin, m);
    Eigen::Matrix<double, 4, Eigen::Dynamic> coords(4, m);
    for (int k = 0; k < cfg_.steps; ++k) {
      const double t_k = static_cast<double>(k) / cfg_.steps;
      for (int a = 0; a < 3; ++a)
        coords.row(a) = positions_[k].row(a) / scale_[a] - Eigen::RowVectorXd::Ones(m);
      coords.row(3).setConstant(t_k);
      forward_net(model_, coords, tapes_[k]);
      positions_[k + 1] = positions_[k];
      for (int a = 0; a < 3; ++a)
        positions_[k + 1].row(a) += dt * scale_[a] * tapes_[k].vel.row(a);
    }
    pred_.resize(m);
    sample_grad_.resize(3, m);
    for (int j = 0; j < m; ++j) {
      Eigen::Vector3d g;
      pred_[j] = sample_trilinear_grad(src_, positions_[cfg_.steps](0, j),
                                       positions_[cfg_.steps](1, j),
                                       positions_[cfg_.steps](2, j), g);
      sample_grad_.col(j) = g;
    }

    // Regularizer stencils at the collocation points.
    reg_coords_.resize(4, m);
    for (int a = 0; a < 3; ++a)
      reg_coords_.row(a) = positions_[0].row(a) / scale_[a] - Eigen::RowVectorXd::Ones(m);
    reg_coords_.row(3) = batch.reg_times.segment(begin, m).transpose();
    reg_sum_ = 0.0;
    for (int a = 0; a < 3; ++a) {
      Eigen::Matrix<double, 4, Eigen::Dynamic> cp = reg_coords_, cm = reg_coords_;
      cp.row(a).array() += kStencilStep;
      cm.row(a).array() -= kStencilStep;
      forward_net(model_, cp, stencil_plus_[a]);
      forward_net(model_, cm, stencil_minus_[a]);
      diff_[a] = (stencil_plus_[a].vel - stencil_minus_[a].vel) / (2.0 * kStencilStep);
      reg_sum_ += diff_[a].squaredNorm();
    }
  }

  // Backward. g_pred: dL/d(pred_j) for this chunk's points (length m).
  // reg_factor: dL/d(reg_sum contribution) per unit, i.e. lambda / n.
  void backward(const Vec& g_pred, double reg_factor, ParamGrads& grads) {
    const double dt = 1.0 / cfg_.steps;
    Mat g_pos = sample_grad_;
    for (int j = 0; j < m_; ++j) g_pos.col(j) *= g_pred[j];

    Eigen::Matrix<double, 4, Eigen::Dynamic> g_coords(4, m_);
    for (int k = cfg_.steps - 1; k >= 0; --k) {
      Mat g_vel(3, m_);
      for (int a = 0; a < 3; ++a) g_vel.row(a) = dt * scale_[a] * g_pos.row(a);
      backward_net(model_, tapes_[k], g_vel, grads, &g_coords);
      for (int a = 0; a < 3; ++a) g_pos.row(a) += g_coords.row(a) / scale_[a];
    }

    for (int a = 0; a < 3; ++a) {
      const Mat g_stencil = (reg_factor / kStencilStep) * diff_[a];
      backward_net(model_, stencil_plus_[a], g_stencil, grads, nullptr);
      backward_net(model_, stencil_minus_[a], -g_stencil, grads, nullptr);
    }
  }

  const Vec& pred() const { return pred_; }
  double reg_sum() const { return reg_sum_; }

private:
  const VelocityFieldModel& model_;
  const Volume& src_;
  const RegistrationConfig& cfg_;
  Eigen::Vector3d scale_;
  int m_ = 0;
  std::vector<Mat> positions_;  // 3 x m per step
  std::vector<Tape> tapes_;
  Vec pred_;
  Mat sample_grad_;
  Eigen::Matrix<double, 4, Eigen::Dynamic> reg_coords_;
  Tape stencil_plus_[3], stencil_minus_[3];
  Mat diff_[3];
  double reg_sum_ = 0.0;
};

struct BatchEval {
  LossValue loss;
  ParamGrads grads;
};

BatchEval evaluate_batch(const VelocityFieldModel& model, const Volume& src,
                         const TrainBatch& batch, const RegistrationConfig& cfg,
                         bool with_grads) {
  const int n = static_cast<int>(batch.points.cols());
  const int n_chunks = (n + kChunk - 1) / kChunk;

  std::vector<Vec> preds(n_chunks);
  std::vector<double> reg_sums(n_chunks, 0.0);
  std::vector<ParamGrads> chunk_grads;
  if (with_grads) chunk_grads.resize(n_chunks);

  // NCC needs batch statistics between forward and backward, so workers are
  // kept alive across both phases.
  std::vector<ChunkWorker> workers(n_chunks, ChunkWorker(model, src, cfg));

#pragma omp parallel for schedule(dynamic)
  for (int c = 0; c < n_chunks; ++c) {
    const int begin = c * kChunk;
    const int m = std::min(kChunk, n - begin);
    workers[c].forward(batch, begin, m);
    preds[c] = workers[c].pred();
    reg_sums[c] = workers[c].reg_sum();
  }

  Vec pred(n);
  double reg_total = 0.0;
  for (int c = 0; c < n_chunks; ++c) {  // fixed order: deterministic sums
    pred.segment(c * kChunk, preds[c].size()) = preds[c];
    reg_total += reg_sums[c];
  }

  LossValue loss;
  loss.regularizer = reg_total / n;
  Vec g_pred(n);
  if (cfg.similarity == RegistrationConfig::Similarity::Mse) {
    const Vec r = pred - batch.target_values;
    loss.similarity = r.squaredNorm() / n;
    g_pred = (2.0 / n) * r;
  } else {
    // Batch-global normalized cross-correlation: L = 1 - corr(pred, target).
    const Vec cp = pred.array() - pred.mean();
    const Vec cq = batch.target_values.array() - batch.target_values.mean();
    const double sxx = cp.squaredNorm(), syy = cq.squaredNorm(), sxy = cp.dot(cq);
    if (sxx > 1e-12 && syy > 1e-12) {
      const double denom = std::sqrt(sxx * syy);
      loss.similarity = 1.0 - sxy / denom;
      g_pred = -(cq - (sxy / sxx) * cp) / denom;
    } else {
      loss.similarity = 1.0;
      g_pred.setZero();
    }
  }
  loss.total = loss.similarity + cfg.reg_weight * loss.regularizer;

  BatchEval out;
  out.loss = loss;
  if (!with_grads) return out;

  const double reg_factor = cfg.reg_weight / n;
#pragma omp parallel for schedule(dynamic)
  for (int c = 0; c < n_chunks; ++c) {
    const int begin = c * kChunk;
    const int m = std::min(kChunk, n - begin);
    chunk_grads[c] = zero_grads(model);
    workers[c].backward(g_pred.segment(begin, m), reg_factor, chunk_grads[c]);
  }
  out.grads = zero_grads(model);
  for (int c = 0; c < n_chunks; ++c) add_grads(out.grads, chunk_grads[c]);
  return out;
}

}  // namespace

LossValue registration_loss(const VelocityFieldModel& model, const Volume& src,
                            const TrainBatch& batch, const RegistrationConfig& cfg) {
  return evaluate_batch(model, src, batch, cfg, false).loss;
}

LossValue registration_loss_grad(const VelocityFieldModel& model, const Volume& src,
                                 const TrainBatch& batch, const RegistrationConfig& cfg,
                                 ParamGrads& grads) {
  BatchEval e = evaluate_batch(model, src, batch, cfg, true);
  grads = std::move(e.grads);
  return e.loss;
}

namespace {

struct AdamState {
  ParamGrads m, v;
  std::int64_t step = 0;

  explicit AdamState(const VelocityFieldModel& model) : m(zero_grads(model)), v(zero_grads(model)) {}

  void update(VelocityFieldModel& model, const ParamGrads& g, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
      m.weights[l] = b1 * m.weights[l] + (1 - b1) * g.weights[l];
      v.weights[l] = b2 * v.weights[l] + (1 - b2) * g.weights[l].cwiseAbs2();
      model.weights[l].array() -=
          lr * (m.weights[l].array() / c1) / ((v.weights[l].array() / c2).sqrt() + eps);
      m.biases[l] = b1 * m.biases[l] + (1 - b1) * g.biases[l];
      v.biases[l] = b2 * v.biases[l] + (1 - b2) * g.biases[l].cwiseAbs2();
      model.biases[l].array() -=
          lr * (m.biases[l].array() / c1) / ((v.biases[l].array() / c2).sqrt() + eps);
    }
  }
};

}  // namespace

TrainResult train_registration(const Volume& src, const Volume& tgt,
                               const RegistrationConfig& cfg) {
  cfg.validate();
  if (!src.grid.same_geometry(tgt.grid))
    fail(ErrorCode::Argument, "train_registration: source/target geometry mismatch");

  TrainResult result;
  result.model = VelocityFieldModel::create(cfg.mapping_dim, cfg.sigma_b, cfg.hidden_sizes,
                                            tgt.grid.dims, cfg.seed);
  AdamState adam(result.model);

  double best = std::numeric_limits<double>::infinity();
  std::vector<Eigen::MatrixXd> best_w;
  std::vector<Eigen::VectorXd> best_b;

  result.loss_history.reserve(cfg.iterations);
  for (int it = 0; it < cfg.iterations; ++it) {
    Rng rng(derive_seed(cfg.seed, "batch", static_cast<std::uint64_t>(it)));
    const TrainBatch batch = make_train_batch(tgt, cfg.batch_size, rng);
    ParamGrads grads;
    const LossValue loss = registration_loss_grad(result.model, src, batch, cfg, grads);
    if (!std::isfinite(loss.total))
      fail(ErrorCode::Training,
           "train_registration: loss diverged at iteration " + std::to_string(it));
    result.loss_history.push_back(loss.total);
    if (loss.total < best) {
      best = loss.total;
      best_w = result.model.weights;
      best_b = result.model.biases;
    }
    adam.update(result.model, grads, cfg.learning_rate);
  }

  result.model.weights = std::move(best_w);
  result.model.biases = std::move(best_b);
  result.initial_loss = result.loss_history.front();
  result.final_loss = best;
  return result;
}

void write_model_sidecar(const std::string& model_path, const GridSpec& grid,
                         const RegistrationConfig& cfg, double final_loss) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["kind"] = "velocity_model";
  j["grid"]["dims"] = grid.dims;
  j["grid"]["spacing"] = grid.spacing;
  auto& aff = j["grid"]["affine"] = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < 4; ++c) row.push_back(grid.affine(r, c));
    aff.push_back(row);
  }
  j["config"]["mapping_dim"] = cfg.mapping_dim;
  j["config"]["sigma_b"] = cfg.sigma_b;
  j["config"]["hidden_sizes"] = cfg.hidden_sizes;
  j["config"]["steps"] = cfg.steps;
  j["config"]["reg_weight"] = cfg.reg_weight;
  j["config"]["iterations"] = cfg.iterations;
  j["config"]["batch_size"] = cfg.batch_size;
  j["config"]["learning_rate"] = cfg.learning_rate;
  j["config"]["seed"] = cfg.seed;
  j["config"]["similarity"] =
      cfg.similarity == RegistrationConfig::Similarity::Mse ? "mse" : "ncc";
  j["final_loss"] = final_loss;
  std::ofstream f(model_path + ".json");
  if (!f) fail(ErrorCode::Io, "cannot open for writing: " + model_path + ".json");
  f << j.dump(2) << "\n";
}

}  // namespace voxaug
