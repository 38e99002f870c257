#include "dfrf/dataio/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "dfrf/dataio/errors.hpp"

namespace dfrf::dataio {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "missing file";
    case ErrorCode::BadMagic: return "bad magic";
    case ErrorCode::VersionMismatch: return "version mismatch";
    case ErrorCode::ProfileMismatch: return "profile mismatch";
    case ErrorCode::CorruptTable: return "corrupt table";
    case ErrorCode::MalformedManifest: return "malformed manifest";
    case ErrorCode::MalformedPose: return "malformed pose";
    case ErrorCode::BadImage: return "bad image";
    case ErrorCode::WriteFailed: return "write failed";
  }
  return "unknown";
}

std::uint8_t quantize(double value) {
  const double c = std::isnan(value) ? 0.0 : std::clamp(value, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

Image read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError(ErrorCode::MissingFile, path.string());
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw DataError(ErrorCode::BadImage, path.string() + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&png);
    throw DataError(ErrorCode::BadImage, path.string() + ": " + png.message);
  }
  Image image(png.height, png.width);
  for (std::size_t i = 0; i < bytes.size(); ++i) image.rgb[i] = bytes[i] / 255.0;
  return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  std::vector<std::uint8_t> bytes(image.rgb.size());
  std::transform(image.rgb.begin(), image.rgb.end(), bytes.begin(), quantize);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw DataError(ErrorCode::WriteFailed, path.string() + ": " + png.message);
}

}  // namespace dfrf::dataio
