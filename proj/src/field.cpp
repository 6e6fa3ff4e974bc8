#include "voxaug/field.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace voxaug {

DeformationField DeformationField::identity(const GridSpec& g) {
  DeformationField f;
  f.grid = g;
  f.map.resize(g.voxel_count() * 3);
  std::size_t i = 0;
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        f.map[i++] = x;
        f.map[i++] = y;
        f.map[i++] = z;
      }
  return f;
}

namespace {

// One voxel's Euler rollout under the mixed field. Endpoint weights fall
// back to a single model so no arithmetic from the other leaks in.
struct MixedVelocity {
  const VelocityFieldModel& m1;
  const VelocityFieldModel& m2;
  MixWeights w;
  MlpScratch scratch1, scratch2;

  Eigen::Vector3d operator()(const Eigen::Vector3d& p, double t) {
    if (w.w1 == 1.0) return m1.velocity_voxel(p, t, scratch1);
    if (w.w1 == 0.0) return m2.velocity_voxel(p, t, scratch2);
    return w.w1 * m1.velocity_voxel(p, t, scratch1) + w.w2 * m2.velocity_voxel(p, t, scratch2);
  }
};

}  // namespace

DeformationField integrate_mixed(const VelocityFieldModel& model1,
                                 const VelocityFieldModel& model2, MixWeights w,
                                 const GridSpec& grid, int steps, ExecPolicy policy) {
  if (steps < 1) fail(ErrorCode::Argument, "integrate: steps must be >= 1");
  if (!(w.w1 >= 0.0 && w.w1 <= 1.0) || w.w1 + w.w2 != 1.0)
    fail(ErrorCode::Argument, "integrate: invalid mix weights");
  if (!model1.same_convention(model2))
    fail(ErrorCode::Argument, "integrate: models use different grid conventions");
  model1.validate();
  model2.validate();

  DeformationField field;
  field.grid = grid;
  field.map.resize(grid.voxel_count() * 3);
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  const std::int64_t n_lines = static_cast<std::int64_t>(ny) * nz;

  auto line = [&](std::int64_t l, MixedVelocity& vel) {
    const int z = static_cast<int>(l / ny);
    const int y = static_cast<int>(l % ny);
    std::size_t o = grid.index(0, y, z) * 3;
    for (int x = 0; x < nx; ++x) {
      const Eigen::Vector3d phi =
          euler_flow(Eigen::Vector3d(x, y, z), steps,
                     [&](const Eigen::Vector3d& p, double t) { return vel(p, t); });
      field.map[o++] = phi[0];
      field.map[o++] = phi[1];
      field.map[o++] = phi[2];
    }
  };

  if (policy == ExecPolicy::Serial) {
    MixedVelocity vel{model1, model2, w};
    for (std::int64_t l = 0; l < n_lines; ++l) line(l, vel);
  } else {
#pragma omp parallel
    {
      MixedVelocity vel{model1, model2, w};
#pragma omp for schedule(static)
      for (std::int64_t l = 0; l < n_lines; ++l) line(l, vel);
    }
  }
  return field;
}

DeformationField integrate(const VelocityFieldModel& model, const GridSpec& grid, int steps,
                           ExecPolicy policy) {
  return integrate_mixed(model, model, MixWeights{1.0, 0.0}, grid, steps, policy);
}

Eigen::Vector3d mix_velocity(const VelocityFieldModel& model1, const VelocityFieldModel& model2,
                             MixWeights w, const Eigen::Vector3d& x_vox, double t) {
  if (!model1.same_convention(model2))
    fail(ErrorCode::Argument, "mix_velocity: models use different grid conventions");
  MixedVelocity vel{model1, model2, w};
  return vel(x_vox, t);
}

std::pair<Volume, LabelMask> apply_deformation(const Volume& src_img, const LabelMask& src_mask,
                                               const DeformationField& field, ExecPolicy policy) {
  if (!src_img.grid.same_geometry(src_mask.grid))
    fail(ErrorCode::Argument, "apply_deformation: image/mask geometry mismatch");
  Volume out_img = Volume::zeros(field.grid);
  LabelMask out_mask = LabelMask::zeros(field.grid);
  const std::int64_t n = static_cast<std::int64_t>(field.grid.voxel_count());

  auto body = [&](std::int64_t i) {
    const double* p = &field.map[3 * i];
    out_img.data[i] = static_cast<float>(sample_trilinear(src_img, p[0], p[1], p[2]));
    out_mask.data[i] = sample_nearest(src_mask, p[0], p[1], p[2]);
  };
  if (policy == ExecPolicy::Serial) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
  } else {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) body(i);
  }
  return {std::move(out_img), std::move(out_mask)};
}

Volume apply_deformation(const Volume& src_img, const DeformationField& field, ExecPolicy policy) {
  Volume out = Volume::zeros(field.grid);
  const std::int64_t n = static_cast<std::int64_t>(field.grid.voxel_count());
  auto body = [&](std::int64_t i) {
    const double* p = &field.map[3 * i];
    out.data[i] = static_cast<float>(sample_trilinear(src_img, p[0], p[1], p[2]));
  };
  if (policy == ExecPolicy::Serial) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
  } else {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) body(i);
  }
  return out;
}

void write_deformation_raw(const DeformationField& field, const std::string& path) {
  std::vector<float> buf(field.map.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(field.map[i]);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail(ErrorCode::Io, "cannot open for writing: " + path);
  const bool ok = std::fwrite(buf.data(), 4, buf.size(), f) == buf.size();
  if (std::fclose(f) != 0 || !ok) fail(ErrorCode::Io, "write failed: " + path);

  nlohmann::json meta;
  meta["schema_version"] = 1;
  meta["kind"] = "deformation_field";
  meta["components"] = 3;
  meta["dtype"] = "float32le";
  meta["dims"] = field.grid.dims;
  meta["spacing"] = field.grid.spacing;
  auto& aff = meta["affine"] = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < 4; ++c) row.push_back(field.grid.affine(r, c));
    aff.push_back(row);
  }
  std::ofstream js(path + ".json");
  if (!js) fail(ErrorCode::Io, "cannot open for writing: " + path + ".json");
  js << meta.dump(2) << "\n";
}

DeformationField read_deformation_raw(const std::string& path) {
  std::ifstream js(path + ".json");
  if (!js) fail(ErrorCode::Io, "cannot open: " + path + ".json");
  nlohmann::json meta = nlohmann::json::parse(js, nullptr, true);
  DeformationField field;
  field.grid.dims = meta.at("dims").get<std::array<int, 3>>();
  field.grid.spacing = meta.at("spacing").get<std::array<double, 3>>();
  const auto& aff = meta.at("affine");
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) field.grid.affine(r, c) = aff.at(r).at(c).get<double>();
  field.grid.validate();

  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) fail(ErrorCode::Io, "cannot open: " + path);
  std::vector<float> buf(field.grid.voxel_count() * 3);
  const bool ok = std::fread(buf.data(), 4, buf.size(), f) == buf.size();
  std::fclose(f);
  if (!ok) fail(ErrorCode::Format, "deformation field payload truncated: " + path);
  field.map.assign(buf.begin(), buf.end());
  return field;
}

double positive_jacobian_fraction(const DeformationField& field) {
  const auto& d = field.grid.dims;
  if (d[0] < 3 || d[1] < 3 || d[2] < 3)
    fail(ErrorCode::Argument, "positive_jacobian_fraction: grid too small");
  std::int64_t positive = 0, total = 0;
  const std::int64_t n_lines = static_cast<std::int64_t>(d[1] - 2) * (d[2] - 2);
#pragma omp parallel for schedule(static) reduction(+ : positive, total)
  for (std::int64_t l = 0; l < n_lines; ++l) {
    const int z = 1 + static_cast<int>(l / (d[1] - 2));
    const int y = 1 + static_cast<int>(l % (d[1] - 2));
    for (int x = 1; x < d[0] - 1; ++x) {
      Eigen::Matrix3d j;
      for (int axis = 0; axis < 3; ++axis) {
        const int dx = axis == 0, dy = axis == 1, dz = axis == 2;
        const std::size_t ip = field.grid.index(x + dx, y + dy, z + dz);
        const std::size_t im = field.grid.index(x - dx, y - dy, z - dz);
        j.col(axis) = (field.at(ip) - field.at(im)) / 2.0;
      }
      if (j.determinant() > 0.0) ++positive;
      ++total;
    }
  }
  return static_cast<double>(positive) / static_cast<double>(total);
}

}  // namespace voxaug
