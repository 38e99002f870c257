#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dfrf::dataio {

/// Row-major RGB image with channel values in [0, 1].
struct Image {
  std::int64_t height = 0, width = 0;
  std::vector<double> rgb;  // [H, W, 3]

  Image() = default;
  Image(std::int64_t h, std::int64_t w, double fill = 0.0)
      : height(h), width(w), rgb(static_cast<std::size_t>(h * w * 3), fill) {}

  double* pixel(std::int64_t y, std::int64_t x) { return rgb.data() + (y * width + x) * 3; }
  const double* pixel(std::int64_t y, std::int64_t x) const { return rgb.data() + (y * width + x) * 3; }
  bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
};

/// 8-bit RGB PNG; decodes to v / 255.
Image read_png(const std::filesystem::path& path);
/// Quantises with round-half-up after clamping to [0, 1].
void write_png(const std::filesystem::path& path, const Image& image);

std::uint8_t quantize(double value);

}  // namespace dfrf::dataio
