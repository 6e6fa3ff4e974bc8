#include "voxaug/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <vector>

namespace voxaug {

namespace {

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;  // must be 348
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must pack to 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;

// zlib's gz layer reads plain files transparently, so one path serves both
// .nii and .nii.gz.
class GzReader {
public:
  explicit GzReader(const std::string& path) : f_(gzopen(path.c_str(), "rb")) {
    if (!f_) fail(ErrorCode::Io, "cannot open file: " + path);
  }
  ~GzReader() {
    if (f_) gzclose(f_);
  }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  void read_exact(void* dst, std::size_t n, const std::string& path) {
    unsigned got = gzread(f_, dst, static_cast<unsigned>(n));
    if (got != n) fail(ErrorCode::Format, "truncated NIfTI file: " + path);
  }
  void skip(std::size_t n, const std::string& path) {
    if (n == 0) return;
    std::vector<char> buf(std::min<std::size_t>(n, 1 << 16));
    std::size_t left = n;
    while (left > 0) {
      std::size_t chunk = std::min(left, buf.size());
      read_exact(buf.data(), chunk, path);
      left -= chunk;
    }
  }

private:
  gzFile f_;
};

bool has_gz_suffix(const std::string& path) {
  return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

Eigen::Matrix4d affine_from_header(const Nifti1Header& h, const std::array<double, 3>& sp) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  if (h.sform_code > 0) {
    for (int c = 0; c < 4; ++c) {
      m(0, c) = h.srow_x[c];
      m(1, c) = h.srow_y[c];
      m(2, c) = h.srow_z[c];
    }
    return m;
  }
  if (h.qform_code > 0) {
    const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    double a2 = 1.0 - (b * b + c * c + d * d);
    const double a = a2 > 0.0 ? std::sqrt(a2) : 0.0;
    Eigen::Matrix3d r;
    r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
        2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
        2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c;
    const double qfac = h.pixdim[0] < 0.0f ? -1.0 : 1.0;
    m.block<3, 3>(0, 0) = r * Eigen::Vector3d(sp[0], sp[1], qfac * sp[2]).asDiagonal();
    m(0, 3) = h.qoffset_x;
    m(1, 3) = h.qoffset_y;
    m(2, 3) = h.qoffset_z;
    return m;
  }
  m.block<3, 3>(0, 0) = Eigen::Vector3d(sp[0], sp[1], sp[2]).asDiagonal();
  return m;
}

struct RawImage {
  GridSpec grid;
  std::int16_t datatype = 0;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  std::vector<char> payload;
};

RawImage read_raw(const std::string& path) {
  GzReader in(path);
  Nifti1Header h{};
  in.read_exact(&h, sizeof(h), path);
  if (h.sizeof_hdr != 348) fail(ErrorCode::Format, "bad NIfTI header size field: " + path);
  if (std::strncmp(h.magic, "n+1", 3) != 0 || h.magic[3] != '\0')
    fail(ErrorCode::Format, "bad NIfTI magic (single-file \"n+1\" expected): " + path);
  if (h.dim[0] < 3) fail(ErrorCode::Format, "NIfTI dim[0] < 3: " + path);
  for (int i = 4; i <= h.dim[0] && i < 8; ++i)
    if (h.dim[i] > 1) fail(ErrorCode::Unsupported, "4D/multi-channel NIfTI not supported: " + path);

  std::size_t elem_size;
  switch (h.datatype) {
    case kDtUint8: elem_size = 1; break;
    case kDtInt16: elem_size = 2; break;
    case kDtInt32: elem_size = 4; break;
    case kDtFloat32: elem_size = 4; break;
    case kDtFloat64: elem_size = 8; break;
    default:
      fail(ErrorCode::Unsupported,
           "unsupported NIfTI datatype " + std::to_string(h.datatype) + ": " + path);
  }

  RawImage img;
  img.datatype = h.datatype;
  img.scl_slope = h.scl_slope;
  img.scl_inter = h.scl_inter;
  img.grid.dims = {h.dim[1], h.dim[2], h.dim[3]};
  for (int i = 0; i < 3; ++i) {
    const float p = h.pixdim[i + 1];
    if (!(p > 0.0f) || !std::isfinite(p))
      fail(ErrorCode::Format, "non-positive pixdim in NIfTI header: " + path);
    img.grid.spacing[i] = p;
  }
  img.grid.affine = affine_from_header(h, img.grid.spacing);
  img.grid.validate();

  const std::size_t offset = h.vox_offset >= 348.0f ? static_cast<std::size_t>(h.vox_offset) : 352;
  in.skip(offset - sizeof(h), path);
  img.payload.resize(img.grid.voxel_count() * elem_size);
  in.read_exact(img.payload.data(), img.payload.size(), path);
  return img;
}

template <typename T>
void decode_to_float(const std::vector<char>& payload, double slope, double inter,
                     std::vector<float>& out) {
  const T* src = reinterpret_cast<const T*>(payload.data());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(static_cast<double>(src[i]) * slope + inter);
}

}  // namespace

Volume read_nifti_volume(const std::string& path) {
  RawImage raw = read_raw(path);
  Volume vol;
  vol.grid = raw.grid;
  vol.data.resize(raw.grid.voxel_count());
  const double slope = raw.scl_slope != 0.0f ? raw.scl_slope : 1.0;
  const double inter = raw.scl_slope != 0.0f ? raw.scl_inter : 0.0;
  switch (raw.datatype) {
    case kDtUint8: decode_to_float<std::uint8_t>(raw.payload, slope, inter, vol.data); break;
    case kDtInt16: decode_to_float<std::int16_t>(raw.payload, slope, inter, vol.data); break;
    case kDtInt32: decode_to_float<std::int32_t>(raw.payload, slope, inter, vol.data); break;
    case kDtFloat32: decode_to_float<float>(raw.payload, slope, inter, vol.data); break;
    case kDtFloat64: decode_to_float<double>(raw.payload, slope, inter, vol.data); break;
  }
  for (float v : vol.data)
    if (!std::isfinite(v)) fail(ErrorCode::Data, "non-finite intensity after scaling: " + path);
  return vol;
}

LabelMask read_nifti_mask(const std::string& path) {
  RawImage raw = read_raw(path);
  LabelMask mask;
  mask.grid = raw.grid;
  mask.data.resize(raw.grid.voxel_count());
  // Label semantics: raw stored values, no slope/inter, must be integral 0..255.
  auto assign = [&](auto type_tag) {
    using T = decltype(type_tag);
    const T* src = reinterpret_cast<const T*>(raw.payload.data());
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
      const double v = static_cast<double>(src[i]);
      if (!std::isfinite(v) || v != std::floor(v) || v < 0.0 || v > 255.0)
        fail(ErrorCode::Data, "mask voxel not an 8-bit label: " + path);
      mask.data[i] = static_cast<std::uint8_t>(v);
    }
  };
  switch (raw.datatype) {
    case kDtUint8: assign(std::uint8_t{}); break;
    case kDtInt16: assign(std::int16_t{}); break;
    case kDtInt32: assign(std::int32_t{}); break;
    case kDtFloat32: assign(float{}); break;
    case kDtFloat64: assign(double{}); break;
  }
  return mask;
}

namespace {

Nifti1Header make_header(const GridSpec& g, std::int16_t datatype, std::int16_t bitpix) {
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(g.dims[0]);
  h.dim[2] = static_cast<std::int16_t>(g.dims[1]);
  h.dim[3] = static_cast<std::int16_t>(g.dims[2]);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = datatype;
  h.bitpix = bitpix;
  h.pixdim[0] = 1.0f;
  for (int i = 0; i < 3; ++i) h.pixdim[i + 1] = static_cast<float>(g.spacing[i]);
  for (int i = 4; i < 8; ++i) h.pixdim[i] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // millimetres
  h.sform_code = 1;
  h.qform_code = 0;
  for (int c = 0; c < 4; ++c) {
    h.srow_x[c] = static_cast<float>(g.affine(0, c));
    h.srow_y[c] = static_cast<float>(g.affine(1, c));
    h.srow_z[c] = static_cast<float>(g.affine(2, c));
  }
  std::strncpy(h.descrip, "voxaug", sizeof(h.descrip) - 1);
  h.magic[0] = 'n';
  h.magic[1] = '+';
  h.magic[2] = '1';
  h.magic[3] = '\0';
  return h;
}

void write_blob(const std::string& path, const Nifti1Header& h, const void* payload,
                std::size_t payload_size) {
  const char pad[4] = {0, 0, 0, 0};
  if (has_gz_suffix(path)) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) fail(ErrorCode::Io, "cannot open for writing: " + path);
    bool ok = gzwrite(f, &h, sizeof(h)) == static_cast<int>(sizeof(h)) &&
              gzwrite(f, pad, 4) == 4 &&
              gzwrite(f, payload, static_cast<unsigned>(payload_size)) ==
                  static_cast<int>(payload_size);
    ok = (gzclose(f) == Z_OK) && ok;
    if (!ok) fail(ErrorCode::Io, "write failed: " + path);
    return;
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail(ErrorCode::Io, "cannot open for writing: " + path);
  bool ok = std::fwrite(&h, 1, sizeof(h), f) == sizeof(h) && std::fwrite(pad, 1, 4, f) == 4 &&
            std::fwrite(payload, 1, payload_size, f) == payload_size;
  ok = (std::fclose(f) == 0) && ok;
  if (!ok) fail(ErrorCode::Io, "write failed: " + path);
}

}  // namespace

void write_nifti(const Volume& vol, const std::string& path) {
  vol.validate();
  const Nifti1Header h = make_header(vol.grid, kDtFloat32, 32);
  write_blob(path, h, vol.data.data(), vol.data.size() * sizeof(float));
}

void write_nifti(const LabelMask& mask, const std::string& path) {
  mask.validate();
  const Nifti1Header h = make_header(mask.grid, kDtUint8, 8);
  write_blob(path, h, mask.data.data(), mask.data.size());
}

}  // namespace voxaug
