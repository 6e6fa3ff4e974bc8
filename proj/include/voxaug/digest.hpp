#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace voxaug {

// Hex-encoded SHA-256; recorded in result summaries so reruns can be
// compared byte for byte.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::string& path);

}  // namespace voxaug
