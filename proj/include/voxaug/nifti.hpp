#pragma once

#include <string>

#include "voxaug/volume.hpp"

namespace voxaug {

// Minimal NIfTI-1 single-file reader/writer (little-endian only, optionally
// gzip-compressed). Supported datatypes: uint8, int16, int32, float32,
// float64. The reader applies scl_slope/scl_inter when scl_slope != 0 and
// takes orientation from the s-form when present, else the q-form, else
// a pixdim-scaled identity. The writer emits float32 (Volume) or uint8
// (LabelMask) payloads with s-form code 1.
Volume read_nifti_volume(const std::string& path);
LabelMask read_nifti_mask(const std::string& path);

void write_nifti(const Volume& vol, const std::string& path);
void write_nifti(const LabelMask& mask, const std::string& path);

}  // namespace voxaug
