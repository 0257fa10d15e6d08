#ifndef SCRIBE_PNG_IO_HPP
#define SCRIBE_PNG_IO_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>

#include <Eigen/Core>

#include "scribe/image.hpp"

namespace scribe {

// 8-bit RGB (3 channels) or grayscale (1 channel); value v is stored as
// round(255 * clamp(v, 0, 1)).
void write_png8(const Image& image, const std::filesystem::path& path);
// 16-bit grayscale; value v is stored as round(65535 * clamp(v, 0, 1)).
void write_png16_gray(const Eigen::ArrayXXd& values, const std::filesystem::path& path);

// Reads 8- or 16-bit gray/RGB PNGs, scaled to [0,1]. Alpha is dropped.
Image read_png(const std::filesystem::path& path);

inline std::uint8_t quantize8(double v) {
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}
inline std::uint16_t quantize16(double v) {
  return static_cast<std::uint16_t>(std::lround(65535.0 * std::clamp(v, 0.0, 1.0)));
}

}  // namespace scribe

#endif  // SCRIBE_PNG_IO_HPP
