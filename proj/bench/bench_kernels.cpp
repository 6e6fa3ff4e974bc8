// Times the OpenMP kernels against their serial reference loops and checks
// the two produce identical bits. Run manually; not part of ctest.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>

#include "voxaug/field.hpp"
#include "voxaug/inject.hpp"
#include "voxaug/mutual_info.hpp"
#include "voxaug/rng.hpp"
#include "voxaug/sdf.hpp"
#include "voxaug/volume.hpp"

using namespace voxaug;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms, bool identical) {
  std::printf("%-22s serial %9.2f ms   omp %9.2f ms   speedup %5.2fx   bitwise %s\n", name,
              serial_ms, parallel_ms, serial_ms / parallel_ms, identical ? "equal" : "DIFFER");
}

Volume random_volume(std::array<int, 3> dims, std::uint64_t seed) {
  Volume v = Volume::zeros(GridSpec::unit(dims));
  Rng rng(seed);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform());
  return v;
}

LabelMask blob_mask(std::array<int, 3> dims, double radius) {
  LabelMask m = LabelMask::zeros(GridSpec::unit(dims));
  const double cx = (dims[0] - 1) / 2.0, cy = (dims[1] - 1) / 2.0, cz = (dims[2] - 1) / 2.0;
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy) + (z - cz) * (z - cz);
        m.at(x, y, z) = d2 <= radius * radius ? 1 : 0;
      }
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  std::array<int, 3> dims = {96, 96, 96};
  if (argc > 1) {
    const int n = std::atoi(argv[1]);
    if (n > 4) dims = {n, n, n};
  }
  std::printf("grid %dx%dx%d, %d OpenMP thread(s)\n\n", dims[0], dims[1], dims[2],
              omp_get_max_threads());

  const Volume vol = random_volume(dims, 7);
  const LabelMask mask = blob_mask(dims, dims[0] / 3.0);
  const GridSpec iso2 = vol.grid.resampled_iso(2.0);

  {
    Volume a, b;
    const double ts = time_ms([&] { a = resample_to_grid(vol, iso2, Interp::Trilinear,
                                                         ExecPolicy::Serial); }, 3);
    const double tp = time_ms([&] { b = resample_to_grid(vol, iso2, Interp::Trilinear,
                                                         ExecPolicy::Parallel); }, 3);
    report("resample_to_grid", ts, tp,
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * 4) == 0);
  }
  {
    const VelocityFieldModel model = VelocityFieldModel::create(32, 3.0, {64, 64}, dims, 11);
    DeformationField fa, fb;
    const double ts = time_ms([&] { fa = integrate(model, vol.grid, 8, ExecPolicy::Serial); }, 1);
    const double tp = time_ms([&] { fb = integrate(model, vol.grid, 8, ExecPolicy::Parallel); }, 1);
    report("integrate (K=8)", ts, tp,
           std::memcmp(fa.map.data(), fb.map.data(), fa.map.size() * 8) == 0);

    Volume wa, wb;
    const double ws = time_ms([&] { wa = apply_deformation(vol, fa, ExecPolicy::Serial); }, 3);
    const double wp = time_ms([&] { wb = apply_deformation(vol, fa, ExecPolicy::Parallel); }, 3);
    report("apply_deformation", ws, wp,
           std::memcmp(wa.data.data(), wb.data.data(), wa.data.size() * 4) == 0);
  }
  {
    SignedDistanceField sa, sb;
    const double ts = time_ms([&] { sa = signed_distance(mask, ExecPolicy::Serial); }, 3);
    const double tp = time_ms([&] { sb = signed_distance(mask, ExecPolicy::Parallel); }, 3);
    report("signed_distance", ts, tp,
           std::memcmp(sa.values.data(), sb.values.data(), sa.values.size() * 8) == 0);
  }
  {
    Volume ba, bb;
    const double ts = time_ms([&] { ba = gaussian_blur(vol, 1.0, ExecPolicy::Serial); }, 3);
    const double tp = time_ms([&] { bb = gaussian_blur(vol, 1.0, ExecPolicy::Parallel); }, 3);
    report("gaussian_blur", ts, tp,
           std::memcmp(ba.data.data(), bb.data.data(), ba.data.size() * 4) == 0);
  }
  {
    const Volume vol2 = random_volume(dims, 8);
    double ma = 0, mb = 0;
    const double ts =
        time_ms([&] { ma = mutual_information(vol, vol2, mask, 32, ExecPolicy::Serial); }, 3);
    const double tp =
        time_ms([&] { mb = mutual_information(vol, vol2, mask, 32, ExecPolicy::Parallel); }, 3);
    report("mutual_information", ts, tp, ma == mb);
  }
  return 0;
}
