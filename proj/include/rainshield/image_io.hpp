#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "rainshield/tensor.hpp"

namespace rainshield {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit raster, 1 (gray) or 3 (RGB) channels.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

void write_png(const std::filesystem::path& path, const Raster& raster);
Raster read_png(const std::filesystem::path& path);

/// round(clamp(v, 0, 1) * 255)
std::uint8_t quantize_unit(float v);

/// Single image (n == 1, c == 1 or 3) <-> raster.
Raster to_raster(const Image& img, int sample = 0);
Image from_raster(const Raster& r);

Raster label_raster(const LabelMap& labels);
LabelMap labels_from_raster(const Raster& r);

}  // namespace rainshield
