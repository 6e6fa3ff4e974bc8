#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <fstream>

#include "doctest.h"
#include "test_support.hpp"
#include "voxaug/nifti.hpp"
#include "voxaug/volume.hpp"

using namespace voxaug;
using namespace voxaug::testing;

namespace {

// Hand-built NIfTI-1 file, independent of write_nifti, so the reader is
// checked against the format and not against our own writer.
struct RawNifti {
  std::vector<char> bytes = std::vector<char>(352, 0);

  template <typename T>
  void put(std::size_t offset, T v) {
    std::memcpy(bytes.data() + offset, &v, sizeof(T));
  }
  void set_defaults(std::int16_t nx, std::int16_t ny, std::int16_t nz, std::int16_t datatype,
                    std::int16_t bitpix) {
    put<std::int32_t>(0, 348);
    put<std::int16_t>(40, 3);  // dim[0]
    put<std::int16_t>(42, nx);
    put<std::int16_t>(44, ny);
    put<std::int16_t>(46, nz);
    for (int i = 4; i < 8; ++i) put<std::int16_t>(40 + 2 * i, 1);
    put<std::int16_t>(70, datatype);
    put<std::int16_t>(72, bitpix);
    for (int i = 0; i < 8; ++i) put<float>(76 + 4 * i, 1.0f);  // pixdim
    put<float>(108, 352.0f);                                   // vox_offset
    put<float>(112, 1.0f);                                     // scl_slope
    bytes[344] = 'n';
    bytes[345] = '+';
    bytes[346] = '1';
    bytes[347] = '\0';
  }
  template <typename T>
  void append_payload(const std::vector<T>& values) {
    const std::size_t at = bytes.size();
    bytes.resize(at + values.size() * sizeof(T));
    std::memcpy(bytes.data() + at, values.data(), values.size() * sizeof(T));
  }
  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
};

}  // namespace

TEST_CASE("read_nifti: minimal float32 file echoes header geometry") {
  const std::string dir = scratch_dir("nifti_minimal");
  RawNifti raw;
  raw.set_defaults(2, 2, 2, 16, 32);
  raw.append_payload(std::vector<float>{0, 1, 2, 3, 4, 5, 6, 7});
  raw.write(dir + "/min.nii");

  const Volume v = read_nifti_volume(dir + "/min.nii");
  CHECK(v.grid.dims == std::array<int, 3>{2, 2, 2});
  CHECK(v.grid.spacing == std::array<double, 3>{1.0, 1.0, 1.0});
  CHECK(v.data[3] == 3.0f);
}

TEST_CASE("read_nifti: scl_slope/scl_inter scaling") {
  const std::string dir = scratch_dir("nifti_scl");
  RawNifti raw;
  raw.set_defaults(1, 1, 1, 4, 16);  // int16
  raw.put<float>(112, 2.0f);         // scl_slope
  raw.put<float>(116, 1.0f);         // scl_inter
  raw.append_payload(std::vector<std::int16_t>{3});
  raw.write(dir + "/scl.nii");
  const Volume v = read_nifti_volume(dir + "/scl.nii");
  CHECK(v.data[0] == 7.0f);  // 3*2 + 1
}

TEST_CASE("nifti round-trip is bitwise identity on data") {
  const std::string dir = scratch_dir("nifti_roundtrip");
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const Volume v = random_volume({8, 8, 8}, seed, -50.f, 150.f);
    const std::string path = dir + "/v" + std::to_string(seed) + ".nii";
    write_nifti(v, path);
    const Volume r = read_nifti_volume(path);
    REQUIRE(r.data.size() == v.data.size());
    CHECK(std::memcmp(r.data.data(), v.data.data(), v.data.size() * 4) == 0);
    CHECK(r.grid.same_geometry(v.grid, 1e-5));

    // Same through gzip.
    write_nifti(v, path + ".gz");
    const Volume rz = read_nifti_volume(path + ".gz");
    CHECK(std::memcmp(rz.data.data(), v.data.data(), v.data.size() * 4) == 0);
  }
}

TEST_CASE("write_nifti: mask payload is uint8 with datatype code 2") {
  const std::string dir = scratch_dir("nifti_mask");
  LabelMask m = LabelMask::zeros(GridSpec::unit({3, 3, 3}));
  m.data[13] = 1;
  write_nifti(m, dir + "/m.nii");

  std::ifstream f(dir + "/m.nii", std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 352 + 27);
  std::int16_t datatype;
  std::memcpy(&datatype, bytes.data() + 70, 2);
  CHECK(datatype == 2);
  CHECK(bytes[352 + 13] == 1);

  const LabelMask r = read_nifti_mask(dir + "/m.nii");
  CHECK(r.data == m.data);
}

TEST_CASE("write_nifti: zero volume payload is 256 zero bytes of float32") {
  const std::string dir = scratch_dir("nifti_zeros");
  write_nifti(Volume::zeros(GridSpec::unit({4, 4, 4})), dir + "/z.nii");
  std::ifstream f(dir + "/z.nii", std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 352 + 64 * sizeof(float));
  for (std::size_t i = 352; i < bytes.size(); ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("read_nifti: malformed and unsupported files are rejected") {
  const std::string dir = scratch_dir("nifti_bad");

  RawNifti bad_magic;
  bad_magic.set_defaults(2, 2, 2, 16, 32);
  bad_magic.bytes[344] = 'x';
  bad_magic.append_payload(std::vector<float>(8, 0.f));
  bad_magic.write(dir + "/bad_magic.nii");
  CHECK_THROWS_AS(read_nifti_volume(dir + "/bad_magic.nii"), Error);

  RawNifti bad_size;
  bad_size.set_defaults(2, 2, 2, 16, 32);
  bad_size.put<std::int32_t>(0, 347);
  bad_size.append_payload(std::vector<float>(8, 0.f));
  bad_size.write(dir + "/bad_size.nii");
  CHECK_THROWS_AS(read_nifti_volume(dir + "/bad_size.nii"), Error);

  RawNifti rgb;
  rgb.set_defaults(2, 2, 2, 128, 24);  // RGB datatype: recognized, unsupported
  rgb.append_payload(std::vector<char>(24, 0));
  rgb.write(dir + "/rgb.nii");
  try {
    read_nifti_volume(dir + "/rgb.nii");
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Unsupported);
  }

  RawNifti nan_payload;
  nan_payload.set_defaults(2, 2, 2, 16, 32);
  std::vector<float> vals(8, 1.0f);
  vals[5] = std::numeric_limits<float>::quiet_NaN();
  nan_payload.append_payload(vals);
  nan_payload.write(dir + "/nan.nii");
  try {
    read_nifti_volume(dir + "/nan.nii");
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Data);
  }

  CHECK_THROWS_AS(read_nifti_volume(dir + "/does_not_exist.nii"), Error);
}

TEST_CASE("resample_to_grid: identity grid reproduces the input exactly") {
  const Volume v = random_volume({7, 6, 5}, 99);
  const Volume r = resample_to_grid(v, v.grid, Interp::Trilinear);
  CHECK(std::memcmp(r.data.data(), v.data.data(), v.data.size() * 4) == 0);
}

TEST_CASE("resample_to_grid: 2x spacing on a ramp hits 0,2,4,6") {
  Volume v = Volume::zeros(GridSpec::unit({8, 2, 2}));
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 8; ++x) v.at(x, y, z) = static_cast<float>(x);
  GridSpec target = v.grid;
  target.dims = {4, 2, 2};
  target.spacing = {2.0, 1.0, 1.0};
  target.affine(0, 0) = 2.0;  // voxel centers at world x = 0,2,4,6
  const Volume r = resample_to_grid(v, target, Interp::Trilinear);
  for (int x = 0; x < 4; ++x) CHECK(r.at(x, 0, 0) == doctest::Approx(2.0 * x).epsilon(1e-12));
}

TEST_CASE("resample_to_grid: nearest keeps the label set") {
  const LabelMask m = random_mask({9, 9, 9}, 5);
  const LabelMask r = resample_to_grid(m, m.grid.resampled_iso(1.7));
  for (auto v : r.data) CHECK((v == 0 || v == 1));
}

TEST_CASE("resample kernels: serial and parallel agree bitwise") {
  const Volume v = random_volume({13, 11, 9}, 42);
  const GridSpec target = v.grid.resampled_iso(1.3);
  const Volume a = resample_to_grid(v, target, Interp::Trilinear, ExecPolicy::Serial);
  const Volume b = resample_to_grid(v, target, Interp::Trilinear, ExecPolicy::Parallel);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * 4) == 0);
}

TEST_CASE("sample_trilinear: exact at grid points, linear between, zero outside") {
  const Volume v = random_volume({5, 4, 3}, 7);
  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x)
        CHECK(sample_trilinear(v, x, y, z) == static_cast<double>(v.at(x, y, z)));

  Volume ramp = Volume::zeros(GridSpec::unit({2, 1, 1}));
  ramp.at(1, 0, 0) = 1.0f;
  CHECK(sample_trilinear(ramp, 0.5, 0, 0) == doctest::Approx(0.5));

  CHECK(sample_trilinear(v, -5, 0, 0) == 0.0);
  CHECK(sample_trilinear(v, 0, 0, 2.0001) == 0.0);
  CHECK(sample_trilinear(v, 4.0, 3.0, 2.0) == static_cast<double>(v.at(4, 3, 2)));  // far corner
}

TEST_CASE("sample_nearest: half-up rounding and zero fill") {
  LabelMask m = LabelMask::zeros(GridSpec::unit({4, 5, 3}));
  m.at(1, 3, 0) = 7;
  CHECK(sample_nearest(m, 1.4, 2.6, 0.0) == 7);
  CHECK(sample_nearest(m, 1.0, 3.0, 0.0) == 7);
  CHECK(sample_nearest(m, 1.5, 2.5, 0.4) == 0);  // ties go up: (2,3,0)
  m.at(2, 3, 0) = 9;
  CHECK(sample_nearest(m, 1.5, 2.5, 0.4) == 9);
  CHECK(sample_nearest(m, -2.0, 0.0, 0.0) == 0);
  CHECK(sample_nearest(m, 0.0, 0.0, 9.0) == 0);
}

TEST_CASE("zscore_normalize: analytic two-value case") {
  Volume v = Volume::zeros(GridSpec::unit({4, 4, 4}));
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = (i % 2 == 0) ? 0.0f : 2.0f;
  const Volume n = zscore_normalize(v);
  for (std::size_t i = 0; i < n.data.size(); ++i)
    CHECK(n.data[i] == doctest::Approx(i % 2 == 0 ? -1.0 : 1.0).epsilon(1e-6));
}

TEST_CASE("zscore_normalize: constant volume is a degenerate input") {
  Volume v = Volume::zeros(GridSpec::unit({4, 4, 4}));
  for (auto& x : v.data) x = 3.5f;
  try {
    zscore_normalize(v);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Degenerate);
  }
}

TEST_CASE("zscore_normalize: masked statistics match brute force and transform is global") {
  const Volume v = random_volume({10, 10, 10}, 21, 5.f, 35.f);
  const LabelMask region = random_mask({10, 10, 10}, 22, 0.3);

  double sum = 0, sum2 = 0, n = 0;
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (region.data[i] == 0) continue;
    sum += v.data[i];
    sum2 += static_cast<double>(v.data[i]) * v.data[i];
    n += 1;
  }
  const double mean = sum / n;
  const double stddev = std::sqrt(sum2 / n - mean * mean);

  const Volume z = zscore_normalize(v, &region);
  for (std::size_t i = 0; i < v.data.size(); ++i)
    CHECK(z.data[i] == doctest::Approx((v.data[i] - mean) / stddev).epsilon(1e-5));

  // Statistics over the region after normalization: mean 0, std 1.
  double m2 = 0, s2 = 0;
  for (std::size_t i = 0; i < z.data.size(); ++i)
    if (region.data[i] != 0) {
      m2 += z.data[i];
      s2 += static_cast<double>(z.data[i]) * z.data[i];
    }
  CHECK(std::abs(m2 / n) < 1e-5);
  CHECK(std::abs(std::sqrt(s2 / n - (m2 / n) * (m2 / n)) - 1.0) < 1e-5);
}

TEST_CASE("zscore_normalize is idempotent") {
  const Volume v = random_volume({8, 8, 8}, 31, -3.f, 9.f);
  const Volume once = zscore_normalize(v);
  const Volume twice = zscore_normalize(once);
  for (std::size_t i = 0; i < v.data.size(); ++i)
    CHECK(twice.data[i] == doctest::Approx(once.data[i]).epsilon(1e-5));
}

namespace {

std::size_t count_components_6(const LabelMask& m) {
  std::vector<char> seen(m.data.size(), 0);
  std::size_t comps = 0;
  std::vector<std::size_t> stack;
  const auto& d = m.grid.dims;
  for (std::size_t s = 0; s < m.data.size(); ++s) {
    if (m.data[s] == 0 || seen[s]) continue;
    ++comps;
    stack.push_back(s);
    seen[s] = 1;
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      const int x = static_cast<int>(cur % d[0]);
      const int y = static_cast<int>((cur / d[0]) % d[1]);
      const int z = static_cast<int>(cur / (static_cast<std::size_t>(d[0]) * d[1]));
      const int c[3] = {x, y, z};
      for (int ax = 0; ax < 3; ++ax)
        for (int dir = -1; dir <= 1; dir += 2) {
          int nb[3] = {c[0], c[1], c[2]};
          nb[ax] += dir;
          if (nb[ax] < 0 || nb[ax] >= d[ax]) continue;
          const std::size_t ni = m.grid.index(nb[0], nb[1], nb[2]);
          if (m.data[ni] != 0 && !seen[ni]) {
            seen[ni] = 1;
            stack.push_back(ni);
          }
        }
    }
  }
  return comps;
}

}  // namespace

TEST_CASE("estimate_brain_mask: recovers a bright sphere within one voxel") {
  const std::array<int, 3> dims = {24, 24, 24};
  const Eigen::Vector3d c(11.5, 11.5, 11.5);
  Volume v = Volume::zeros(GridSpec::unit(dims));
  const LabelMask sphere = sphere_mask(dims, c, 8.0);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = sphere.data[i] ? 100.0f : 0.0f;

  const LabelMask est = estimate_brain_mask(v);
  const LabelMask dilated = sphere_mask(dims, c, 9.0);
  const LabelMask eroded = sphere_mask(dims, c, 7.0);
  for (std::size_t i = 0; i < est.data.size(); ++i) {
    CHECK((est.data[i] == 0 || est.data[i] == 1));
    if (eroded.data[i]) CHECK(est.data[i] == 1);    // no missing core
    if (!dilated.data[i]) CHECK(est.data[i] == 0);  // no spill beyond 1 voxel
  }
  CHECK(count_components_6(est) == 1);
}

TEST_CASE("estimate_brain_mask: all-zero volume is degenerate") {
  try {
    estimate_brain_mask(Volume::zeros(GridSpec::unit({6, 6, 6})));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Degenerate);
  }
}

TEST_CASE("GridSpec: validation catches bad geometry") {
  GridSpec g = GridSpec::unit({4, 4, 4});
  CHECK_NOTHROW(g.validate());
  g.spacing[1] = 0.0;
  CHECK_THROWS_AS(g.validate(), Error);

  GridSpec sheared = GridSpec::unit({4, 4, 4});
  sheared.affine(0, 1) = 0.5;  // non-orthogonal direction
  CHECK_THROWS_AS(sheared.validate(), Error);
}
