#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <numbers>

#include "doctest.h"
#include "test_support.hpp"
#include "voxaug/field.hpp"
#include "voxaug/inr.hpp"
#include "voxaug/train.hpp"

using namespace voxaug;
using namespace voxaug::testing;

namespace {

// Random parameter nudge so evaluation points sit away from the rectifier
// and trilinear kinks that the fresh near-identity init would land on.
void perturb_model(VelocityFieldModel& m, double scale, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& w : m.weights)
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] += scale * rng.normal();
  for (auto& b : m.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] += scale * rng.normal();
}

}  // namespace

TEST_CASE("encode: zero coordinate gives cos block 1, sin block 0") {
  const FourierEncoding enc = FourierEncoding::sample(128, 3.0, 1);
  const Eigen::VectorXd e = enc.encode(Eigen::Vector4d::Zero());
  REQUIRE(e.size() == 256);  // 2L for L=128
  for (int i = 0; i < 128; ++i) {
    CHECK(e[i] == 1.0);
    CHECK(e[128 + i] == 0.0);
  }
}

TEST_CASE("encode: analytic row (0.5,0,0,0) at c=(1,0,0,0)") {
  FourierEncoding enc;
  enc.freq = Eigen::MatrixXd::Zero(1, 4);
  enc.freq(0, 0) = 0.5;  // phase = 2*pi*0.5*1 = pi
  const Eigen::VectorXd e = enc.encode(Eigen::Vector4d(1, 0, 0, 0));
  REQUIRE(e.size() == 2);
  CHECK(e[0] == doctest::Approx(-1.0).epsilon(1e-6));  // cos(pi)
  CHECK(std::abs(e[1]) < 1e-6);                        // sin(pi)
}

TEST_CASE("encode: batch output matches single-point path") {
  const FourierEncoding enc = FourierEncoding::sample(16, 2.0, 3);
  Eigen::Matrix<double, 4, Eigen::Dynamic> coords(4, 5);
  Rng rng(4);
  for (int j = 0; j < 5; ++j)
    coords.col(j) << rng.uniform_in(-1, 1), rng.uniform_in(-1, 1), rng.uniform_in(-1, 1),
        rng.uniform();
  Eigen::MatrixXd batch;
  enc.encode_batch(coords, batch);
  for (int j = 0; j < 5; ++j) {
    const Eigen::VectorXd single = enc.encode(coords.col(j));
    CHECK((batch.col(j) - single).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("query_velocity: zero-weight model returns exactly zero") {
  VelocityFieldModel m = VelocityFieldModel::create(8, 3.0, {16}, {9, 9, 9}, 5);
  for (auto& w : m.weights) w.setZero();
  for (auto& b : m.biases) b.setZero();
  const Eigen::Vector3d v = query_velocity(m, Eigen::Vector3d(3.2, 4.7, 1.1), 0.35);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 0.0);
  CHECK(v[2] == 0.0);
}

TEST_CASE("query_velocity: hand-computed forward pass, one hidden unit") {
  VelocityFieldModel m;
  m.grid_dims = {3, 3, 3};  // half-extent 1: normalize(x) = x - 1
  m.encoding.freq = Eigen::MatrixXd(1, 4);
  m.encoding.freq << 0.3, -0.2, 0.1, 0.05;
  m.weights.push_back((Eigen::MatrixXd(1, 2) << 0.7, -0.4).finished());
  m.biases.push_back((Eigen::VectorXd(1) << 0.2).finished());
  m.weights.push_back((Eigen::MatrixXd(3, 1) << 1.0, -2.0, 0.5).finished());
  m.biases.push_back((Eigen::VectorXd(3) << 0.01, 0.02, -0.03).finished());

  const Eigen::Vector3d x_vox(1.5, 0.5, 2.0);
  const double t = 0.25;
  const Eigen::Vector3d got = query_velocity(m, x_vox, t);

  // Independent recomputation.
  const double phase =
      2.0 * std::numbers::pi * (0.3 * 0.5 + -0.2 * -0.5 + 0.1 * 1.0 + 0.05 * 0.25);
  const double h = std::max(0.0, 0.7 * std::cos(phase) - 0.4 * std::sin(phase) + 0.2);
  const Eigen::Vector3d expect(1.0 * h + 0.01, -2.0 * h + 0.02, 0.5 * h - 0.03);
  CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("query_velocity: continuity bounded by the weight-norm Lipschitz constant") {
  VelocityFieldModel m = VelocityFieldModel::create(16, 2.0, {24, 24}, {17, 17, 17}, 6);
  perturb_model(m, 0.2, 7);
  double lip = 2.0 * std::numbers::pi * m.encoding.freq.norm();
  for (const auto& w : m.weights) lip *= w.norm();

  const double delta = 1e-4;
  MlpScratch scratch;
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::Vector4d c(rng.uniform_in(-1, 1), rng.uniform_in(-1, 1), rng.uniform_in(-1, 1),
                      rng.uniform());
    for (int axis = 0; axis < 3; ++axis) {
      Eigen::Vector4d c2 = c;
      c2[axis] += delta;
      const Eigen::Vector3d v1 = m.velocity_normalized(c, scratch);
      const Eigen::Vector3d v2 = m.velocity_normalized(c2, scratch);
      CHECK((v1 - v2).norm() <= lip * delta * (1.0 + 1e-9));
    }
  }
}

TEST_CASE("query_velocity: non-finite weights are rejected") {
  VelocityFieldModel m = VelocityFieldModel::create(4, 3.0, {8}, {9, 9, 9}, 2);
  m.weights[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(query_velocity(m, Eigen::Vector3d(1, 1, 1), 0.0), Error);
}

TEST_CASE("integrate: zero-velocity model yields the exact identity field") {
  VelocityFieldModel m = VelocityFieldModel::create(8, 3.0, {16}, {7, 6, 5}, 9);
  for (auto& w : m.weights) w.setZero();
  for (auto& b : m.biases) b.setZero();
  const GridSpec grid = GridSpec::unit({7, 6, 5});
  const DeformationField f = integrate(m, grid, 8);
  std::size_t i = 0;
  for (int z = 0; z < 5; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 7; ++x) {
        CHECK(f.map[i++] == static_cast<double>(x));
        CHECK(f.map[i++] == static_cast<double>(y));
        CHECK(f.map[i++] == static_cast<double>(z));
      }
}

TEST_CASE("integrate: constant velocity is exact for power-of-two step counts") {
  // dim-1 = 8 makes the voxel<->normalized conversion exact in binary.
  const std::array<int, 3> dims = {9, 9, 9};
  const VelocityFieldModel m = VelocityFieldModel::constant(dims, Eigen::Vector3d(1, 0, 0));
  const GridSpec grid = GridSpec::unit(dims);
  for (int steps : {1, 2, 4, 8, 16}) {
    const DeformationField f = integrate(m, grid, steps);
    std::size_t i = 0;
    for (int z = 0; z < 9; ++z)
      for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 9; ++x) {
          CHECK(f.map[i++] == static_cast<double>(x) + 1.0);
          CHECK(f.map[i++] == static_cast<double>(y));
          CHECK(f.map[i++] == static_cast<double>(z));
        }
  }
}

TEST_CASE("euler_flow: closed-form growth x' = x approaches e*x") {
  const Eigen::Vector3d x0(1.0, 0.5, -0.25);
  auto vel = [](const Eigen::Vector3d& p, double) { return p; };
  const Eigen::Vector3d x64 = euler_flow(x0, 64, vel);
  const double factor = std::pow(1.0 + 1.0 / 64.0, 64.0);
  CHECK((x64 - factor * x0).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(factor - std::numbers::e) / std::numbers::e < 0.01);  // K=64 within 1%
  // First-order convergence: the gap to e shrinks roughly like 1/K.
  const double gap64 = std::abs(std::pow(1 + 1.0 / 64, 64) - std::numbers::e);
  const double gap128 = std::abs(std::pow(1 + 1.0 / 128, 128) - std::numbers::e);
  CHECK(gap64 / gap128 == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("integrate is deterministic and policy-independent") {
  VelocityFieldModel m = VelocityFieldModel::create(12, 3.0, {24, 24}, {15, 15, 15}, 17);
  perturb_model(m, 0.05, 18);
  const GridSpec grid = GridSpec::unit({15, 15, 15});
  const DeformationField a = integrate(m, grid, 8, ExecPolicy::Parallel);
  const DeformationField b = integrate(m, grid, 8, ExecPolicy::Parallel);
  const DeformationField c = integrate(m, grid, 8, ExecPolicy::Serial);
  CHECK(std::memcmp(a.map.data(), b.map.data(), a.map.size() * 8) == 0);
  CHECK(std::memcmp(a.map.data(), c.map.data(), a.map.size() * 8) == 0);
}

TEST_CASE("analytic gradients match central finite differences") {
  const std::array<int, 3> dims = {8, 8, 8};
  const Volume src = gaussian_blob(dims, {3.1, 3.6, 3.4}, 2.0, 80.0);
  const Volume tgt = gaussian_blob(dims, {4.2, 3.2, 3.9}, 2.2, 75.0);

  RegistrationConfig cfg;
  cfg.mapping_dim = 4;
  cfg.hidden_sizes = {8};
  cfg.steps = 2;
  cfg.batch_size = 32;
  cfg.reg_weight = 0.01;
  cfg.seed = 11;

  VelocityFieldModel model =
      VelocityFieldModel::create(cfg.mapping_dim, cfg.sigma_b, cfg.hidden_sizes, dims, cfg.seed);
  perturb_model(model, 0.15, 12);

  Rng rng(derive_seed(cfg.seed, "fd-batch"));
  const TrainBatch batch = make_train_batch(tgt, cfg.batch_size, rng);

  ParamGrads grads;
  registration_loss_grad(model, src, batch, cfg, grads);

  const double eps = 1e-4;
  double max_rel = 0.0;
  auto check_param = [&](double& p, double analytic) {
    const double saved = p;
    p = saved + eps;
    const double lp = registration_loss(model, src, batch, cfg).total;
    p = saved - eps;
    const double lm = registration_loss(model, src, batch, cfg).total;
    p = saved;
    const double fd = (lp - lm) / (2.0 * eps);
    const double rel = std::abs(analytic - fd) / std::max({std::abs(fd), std::abs(analytic), 1e-8});
    max_rel = std::max(max_rel, rel);
  };
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    for (Eigen::Index i = 0; i < model.weights[l].size(); ++i)
      check_param(model.weights[l].data()[i], grads.weights[l].data()[i]);
    for (Eigen::Index i = 0; i < model.biases[l].size(); ++i)
      check_param(model.biases[l].data()[i], grads.biases[l].data()[i]);
  }
  CHECK(max_rel <= 1e-3);
}

TEST_CASE("ncc similarity: gradients also match finite differences") {
  const std::array<int, 3> dims = {8, 8, 8};
  const Volume src = gaussian_blob(dims, {3.0, 4.0, 3.0}, 2.0);
  const Volume tgt = gaussian_blob(dims, {4.0, 3.5, 4.0}, 2.0);

  RegistrationConfig cfg;
  cfg.mapping_dim = 4;
  cfg.hidden_sizes = {8};
  cfg.steps = 2;
  cfg.batch_size = 24;
  cfg.similarity = RegistrationConfig::Similarity::Ncc;
  cfg.seed = 21;

  VelocityFieldModel model =
      VelocityFieldModel::create(cfg.mapping_dim, cfg.sigma_b, cfg.hidden_sizes, dims, cfg.seed);
  perturb_model(model, 0.15, 22);
  Rng rng(23);
  const TrainBatch batch = make_train_batch(tgt, cfg.batch_size, rng);

  ParamGrads grads;
  registration_loss_grad(model, src, batch, cfg, grads);
  const double eps = 1e-5;
  double max_rel = 0.0;
  for (Eigen::Index i = 0; i < model.weights[0].size(); ++i) {
    double& p = model.weights[0].data()[i];
    const double saved = p;
    p = saved + eps;
    const double lp = registration_loss(model, src, batch, cfg).total;
    p = saved - eps;
    const double lm = registration_loss(model, src, batch, cfg).total;
    p = saved;
    const double fd = (lp - lm) / (2.0 * eps);
    const double analytic = grads.weights[0].data()[i];
    max_rel = std::max(max_rel, std::abs(analytic - fd) /
                                    std::max({std::abs(fd), std::abs(analytic), 1e-8}));
  }
  CHECK(max_rel <= 1e-3);
}

TEST_CASE("train_registration: loss drops, history is recorded, result is deterministic") {
  const std::array<int, 3> dims = {12, 12, 12};
  const Volume src = gaussian_blob(dims, {5.0, 5.5, 5.5}, 2.5);
  const Volume tgt = gaussian_blob(dims, {6.5, 5.5, 5.5}, 2.5);

  RegistrationConfig cfg;
  cfg.mapping_dim = 8;
  cfg.hidden_sizes = {16, 16};
  cfg.steps = 4;
  cfg.iterations = 60;
  cfg.batch_size = 128;
  cfg.learning_rate = 3e-3;
  cfg.seed = 33;

  const TrainResult a = train_registration(src, tgt, cfg);
  CHECK(a.loss_history.size() == 60);
  CHECK(a.final_loss <= a.initial_loss);
  CHECK(a.final_loss < 0.5 * a.initial_loss);  // this pair is easy

  const TrainResult b = train_registration(src, tgt, cfg);
  for (std::size_t l = 0; l < a.model.weights.size(); ++l) {
    CHECK(std::memcmp(a.model.weights[l].data(), b.model.weights[l].data(),
                      a.model.weights[l].size() * 8) == 0);
    CHECK(std::memcmp(a.model.biases[l].data(), b.model.biases[l].data(),
                      a.model.biases[l].size() * 8) == 0);
  }
}

TEST_CASE("train_registration: geometry mismatch and divergence raise typed errors") {
  const Volume a = gaussian_blob({8, 8, 8}, {4, 4, 4}, 2.0);
  const Volume b = gaussian_blob({9, 9, 9}, {4, 4, 4}, 2.0);
  RegistrationConfig cfg;
  cfg.mapping_dim = 4;
  cfg.hidden_sizes = {8};
  cfg.iterations = 2;
  cfg.batch_size = 8;
  try {
    train_registration(a, b, cfg);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Argument);
  }

  const Volume c = gaussian_blob({8, 8, 8}, {4.5, 4, 4}, 2.0);
  cfg.learning_rate = 1e80;  // Adam step of ~1e80 overflows the stencil norms
  cfg.iterations = 10;
  try {
    train_registration(a, c, cfg);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Training);
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
}

TEST_CASE("model serialization: quantize-once round-trip") {
  const std::string dir = scratch_dir("model_io");
  VelocityFieldModel m = VelocityFieldModel::create(8, 2.5, {16, 16}, {13, 14, 15}, 41);
  perturb_model(m, 0.1, 42);
  const std::string p1 = dir + "/m.vfm", p2 = dir + "/m2.vfm";
  save_model(m, p1);
  const VelocityFieldModel r = load_model(p1);
  CHECK(r.grid_dims == m.grid_dims);
  CHECK(r.encoding.mapping_dim() == 8);
  CHECK(r.layer_sizes() == m.layer_sizes());

  // float32 quantization happens exactly once: saving the loaded model
  // reproduces the file byte for byte.
  save_model(r, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  // Loaded model evaluates close to the original (quantization only).
  MlpScratch s1, s2;
  const Eigen::Vector3d v1 = m.velocity_voxel({3.3, 7.1, 9.9}, 0.5, s1);
  const Eigen::Vector3d v2 = r.velocity_voxel({3.3, 7.1, 9.9}, 0.5, s2);
  CHECK((v1 - v2).norm() < 1e-5 * (1.0 + v1.norm()));

  CHECK_THROWS_AS(load_model(dir + "/missing.vfm"), Error);
}

TEST_CASE("displacement convergence: step halving shrinks the K vs 2K gap by ~2x") {
  const std::array<int, 3> dims = {16, 16, 16};
  const Volume src = gaussian_blob(dims, {7.0, 7.5, 7.5}, 3.0);
  const Volume tgt = gaussian_blob(dims, {9.0, 7.5, 7.5}, 3.0);
  RegistrationConfig cfg;
  cfg.mapping_dim = 8;
  cfg.hidden_sizes = {16, 16};
  cfg.steps = 4;
  cfg.iterations = 120;
  cfg.batch_size = 256;
  cfg.learning_rate = 3e-3;
  cfg.seed = 55;
  const TrainResult r = train_registration(src, tgt, cfg);

  const GridSpec grid = GridSpec::unit(dims);
  auto max_gap = [&](int k1, int k2) {
    const DeformationField f1 = integrate(r.model, grid, k1);
    const DeformationField f2 = integrate(r.model, grid, k2);
    double m = 0;
    for (std::size_t i = 0; i < f1.map.size(); ++i)
      m = std::max(m, std::abs(f1.map[i] - f2.map[i]));
    return m;
  };
  const double d1 = max_gap(4, 8);
  const double d2 = max_gap(8, 16);
  CHECK(d1 / d2 == doctest::Approx(2.0).epsilon(0.2));  // O(1/K) halving
}
