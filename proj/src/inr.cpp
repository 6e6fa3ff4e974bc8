#include "voxaug/inr.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>

#include "voxaug/rng.hpp"

namespace voxaug {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr char kModelMagic[8] = {'V', 'X', 'A', 'V', 'F', 'M', '0', '1'};
}  // namespace

Eigen::VectorXd FourierEncoding::encode(const Eigen::Vector4d& c) const {
  const int L = mapping_dim();
  Eigen::VectorXd out(2 * L);
  const Eigen::VectorXd phase = kTwoPi * (freq * c);
  for (int i = 0; i < L; ++i) {
    out[i] = std::cos(phase[i]);
    out[L + i] = std::sin(phase[i]);
  }
  return out;
}

void FourierEncoding::encode_batch(const Eigen::Matrix<double, 4, Eigen::Dynamic>& coords,
                                   Eigen::MatrixXd& out) const {
  const int L = mapping_dim();
  const Eigen::Index n = coords.cols();
  out.resize(2 * L, n);
  const Eigen::MatrixXd phase = kTwoPi * (freq * coords);
  out.topRows(L) = phase.array().cos();
  out.bottomRows(L) = phase.array().sin();
}

FourierEncoding FourierEncoding::sample(int mapping_dim, double sigma_b, std::uint64_t seed) {
  if (mapping_dim < 1) fail(ErrorCode::Argument, "FourierEncoding: mapping_dim must be >= 1");
  FourierEncoding enc;
  enc.sigma_b = sigma_b;
  enc.freq.resize(mapping_dim, 4);
  Rng rng(seed);
  for (int i = 0; i < mapping_dim; ++i)
    for (int j = 0; j < 4; ++j) enc.freq(i, j) = sigma_b * rng.normal();
  return enc;
}

std::vector<int> VelocityFieldModel::layer_sizes() const {
  std::vector<int> sizes;
  sizes.push_back(encoding.output_dim());
  for (const auto& w : weights) sizes.push_back(static_cast<int>(w.rows()));
  return sizes;
}

void VelocityFieldModel::validate() const {
  if (weights.empty() || weights.size() != biases.size())
    fail(ErrorCode::Argument, "VelocityFieldModel: inconsistent layer arrays");
  if (weights.back().rows() != 3)
    fail(ErrorCode::Argument, "VelocityFieldModel: output layer must have 3 units");
  Eigen::Index expect = encoding.output_dim();
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].cols() != expect || biases[l].size() != weights[l].rows())
      fail(ErrorCode::Argument, "VelocityFieldModel: layer shape mismatch");
    expect = weights[l].rows();
    if (!weights[l].allFinite() || !biases[l].allFinite())
      fail(ErrorCode::Data, "VelocityFieldModel: non-finite parameters");
  }
  if (!encoding.freq.allFinite())
    fail(ErrorCode::Data, "VelocityFieldModel: non-finite frequency matrix");
}

Eigen::Vector3d VelocityFieldModel::normalize(const Eigen::Vector3d& x_vox) const {
  Eigen::Vector3d n;
  for (int a = 0; a < 3; ++a) {
    const double half = grid_dims[a] > 1 ? (grid_dims[a] - 1) / 2.0 : 1.0;
    n[a] = x_vox[a] / half - 1.0;
  }
  return n;
}

Eigen::Vector3d VelocityFieldModel::voxel_scale() const {
  Eigen::Vector3d s;
  for (int a = 0; a < 3; ++a) s[a] = grid_dims[a] > 1 ? (grid_dims[a] - 1) / 2.0 : 1.0;
  return s;
}

Eigen::Vector3d VelocityFieldModel::velocity_normalized(const Eigen::Vector4d& c,
                                                        MlpScratch& scratch) const {
  const int L = encoding.mapping_dim();
  scratch.enc.resize(2 * L);
  for (int i = 0; i < L; ++i) {
    const double phase = kTwoPi * encoding.freq.row(i).dot(c);
    scratch.enc[i] = std::cos(phase);
    scratch.enc[L + i] = std::sin(phase);
  }
  scratch.act.resize(weights.size());
  const Eigen::VectorXd* in = &scratch.enc;
  for (std::size_t l = 0; l + 1 < weights.size(); ++l) {
    scratch.act[l].noalias() = weights[l] * (*in);
    scratch.act[l] += biases[l];
    scratch.act[l] = scratch.act[l].cwiseMax(0.0);  // rectifier
    in = &scratch.act[l];
  }
  const std::size_t last = weights.size() - 1;
  scratch.act[last].noalias() = weights[last] * (*in);
  scratch.act[last] += biases[last];
  return scratch.act[last].head<3>();
}

Eigen::Vector3d VelocityFieldModel::velocity_voxel(const Eigen::Vector3d& x_vox, double t,
                                                   MlpScratch& scratch) const {
  Eigen::Vector4d c;
  c << normalize(x_vox), t;
  const Eigen::Vector3d vn = velocity_normalized(c, scratch);
  return vn.cwiseProduct(voxel_scale());
}

Eigen::Vector3d VelocityFieldModel::velocity_voxel(const Eigen::Vector3d& x_vox, double t) const {
  MlpScratch scratch;
  return velocity_voxel(x_vox, t, scratch);
}

Eigen::Vector3d query_velocity(const VelocityFieldModel& model, const Eigen::Vector3d& x_vox,
                               double t) {
  model.validate();
  return model.velocity_voxel(x_vox, t);
}

VelocityFieldModel VelocityFieldModel::create(int mapping_dim, double sigma_b,
                                              const std::vector<int>& hidden_sizes,
                                              std::array<int, 3> grid_dims, std::uint64_t seed) {
  VelocityFieldModel m;
  m.encoding = FourierEncoding::sample(mapping_dim, sigma_b, derive_seed(seed, "fourier"));
  m.grid_dims = grid_dims;
  std::vector<int> sizes;
  sizes.push_back(2 * mapping_dim);
  for (int h : hidden_sizes) {
    if (h < 1) fail(ErrorCode::Argument, "VelocityFieldModel: hidden size must be >= 1");
    sizes.push_back(h);
  }
  sizes.push_back(3);
  Rng rng(derive_seed(seed, "mlp-init"));
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int fan_in = sizes[l], fan_out = sizes[l + 1];
    Eigen::MatrixXd w(fan_out, fan_in);
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int i = 0; i < fan_out; ++i)
      for (int j = 0; j < fan_in; ++j) w(i, j) = scale * rng.normal();
    if (l + 2 == sizes.size()) w *= 1e-4;
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return m;
}

VelocityFieldModel VelocityFieldModel::constant(std::array<int, 3> grid_dims,
                                                const Eigen::Vector3d& v_vox) {
  VelocityFieldModel m;
  m.encoding.sigma_b = 0.0;
  m.encoding.freq = Eigen::MatrixXd::Zero(1, 4);
  m.grid_dims = grid_dims;
  m.weights.push_back(Eigen::MatrixXd::Zero(3, 2));
  m.biases.emplace_back(3);
  const Eigen::Vector3d s = m.voxel_scale();
  m.biases.back() = v_vox.cwiseQuotient(s);
  return m;
}

namespace {

void put_f32(std::vector<char>& buf, const double* src, std::size_t n) {
  const std::size_t at = buf.size();
  buf.resize(at + n * 4);
  for (std::size_t i = 0; i < n; ++i) {
    const float f = static_cast<float>(src[i]);
    std::memcpy(buf.data() + at + i * 4, &f, 4);
  }
}

void put_i32(std::vector<char>& buf, std::int32_t v) {
  const std::size_t at = buf.size();
  buf.resize(at + 4);
  std::memcpy(buf.data() + at, &v, 4);
}

struct Cursor {
  const char* p;
  const char* end;
  void need(std::size_t n) {
    if (p + n > end) fail(ErrorCode::Format, "model file truncated");
  }
  std::int32_t i32() {
    need(4);
    std::int32_t v;
    std::memcpy(&v, p, 4);
    p += 4;
    return v;
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, p, 8);
    p += 8;
    return v;
  }
  void f32_array(double* dst, std::size_t n) {
    need(n * 4);
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, p + i * 4, 4);
      dst[i] = f;
    }
    p += n * 4;
  }
};

}  // namespace

void save_model(const VelocityFieldModel& model, const std::string& path) {
  model.validate();
  std::vector<char> buf;
  buf.insert(buf.end(), kModelMagic, kModelMagic + 8);
  put_i32(buf, model.encoding.mapping_dim());
  const std::size_t sigma_at = buf.size();
  buf.resize(sigma_at + 8);
  std::memcpy(buf.data() + sigma_at, &model.encoding.sigma_b, 8);
  const auto sizes = model.layer_sizes();
  put_i32(buf, static_cast<std::int32_t>(sizes.size()));
  for (int s : sizes) put_i32(buf, s);
  for (int d : model.grid_dims) put_i32(buf, d);
  // B matrix row-major, then per layer W row-major followed by b.
  const int L = model.encoding.mapping_dim();
  {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> fr = model.encoding.freq;
    put_f32(buf, fr.data(), static_cast<std::size_t>(L) * 4);
  }
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> wr = model.weights[l];
    put_f32(buf, wr.data(), static_cast<std::size_t>(wr.size()));
    put_f32(buf, model.biases[l].data(), static_cast<std::size_t>(model.biases[l].size()));
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail(ErrorCode::Io, "cannot open for writing: " + path);
  const bool ok = std::fwrite(buf.data(), 1, buf.size(), f) == buf.size();
  if (std::fclose(f) != 0 || !ok) fail(ErrorCode::Io, "write failed: " + path);
}

VelocityFieldModel load_model(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) fail(ErrorCode::Io, "cannot open: " + path);
  std::fseek(f, 0, SEEK_END);
  const long sz = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<char> buf(static_cast<std::size_t>(sz));
  const bool ok = std::fread(buf.data(), 1, buf.size(), f) == buf.size();
  std::fclose(f);
  if (!ok) fail(ErrorCode::Io, "read failed: " + path);
  if (buf.size() < 8 || std::memcmp(buf.data(), kModelMagic, 8) != 0)
    fail(ErrorCode::Format, "not a velocity model file: " + path);

  Cursor cur{buf.data() + 8, buf.data() + buf.size()};
  VelocityFieldModel m;
  const int L = cur.i32();
  m.encoding.sigma_b = cur.f64();
  const int n_sizes = cur.i32();
  if (L < 1 || n_sizes < 2 || n_sizes > 64) fail(ErrorCode::Format, "bad model header: " + path);
  std::vector<int> sizes(n_sizes);
  for (auto& s : sizes) s = cur.i32();
  if (sizes.front() != 2 * L || sizes.back() != 3)
    fail(ErrorCode::Format, "inconsistent model layer sizes: " + path);
  for (auto& d : m.grid_dims) d = cur.i32();
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> fr(L, 4);
  cur.f32_array(fr.data(), static_cast<std::size_t>(L) * 4);
  m.encoding.freq = fr;
  for (int l = 0; l + 1 < n_sizes; ++l) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> wr(sizes[l + 1],
                                                                              sizes[l]);
    cur.f32_array(wr.data(), static_cast<std::size_t>(wr.size()));
    m.weights.emplace_back(wr);
    Eigen::VectorXd b(sizes[l + 1]);
    cur.f32_array(b.data(), static_cast<std::size_t>(b.size()));
    m.biases.push_back(std::move(b));
  }
  m.validate();
  return m;
}

}  // namespace voxaug
