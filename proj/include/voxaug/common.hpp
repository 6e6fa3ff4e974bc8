#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace voxaug {

enum class ErrorCode {
  Argument,     // bad parameter or geometry mismatch
  Degenerate,   // input valid in form but unusable (zero variance, empty mask, ...)
  Format,       // malformed file
  Unsupported,  // recognized but unsupported feature (e.g. rare NIfTI datatype)
  Data,         // non-finite or otherwise corrupt values
  Io,           // filesystem failure
  Training,     // optimization diverged
  Placement     // no valid lesion placement found
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

// Kernels take an execution policy: Parallel is the OpenMP path used in
// production, Serial is the reference loop kept for equivalence tests and
// benchmarking. Per-voxel arithmetic is identical in both.
enum class ExecPolicy { Serial, Parallel };

}  // namespace voxaug
