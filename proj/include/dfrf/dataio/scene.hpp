#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dfrf/conditioning/conditioning.hpp"
#include "dfrf/dataio/image.hpp"
#include "dfrf/geometry/camera.hpp"

// On-disk scene: `manifest` (JSON) plus frames/%05d.png and
// backgrounds/%05d.png.

namespace dfrf::dataio {

struct CameraFrame {
  Image image, background;
  geometry::Intrinsics K;
  geometry::Pose pose;
  std::int64_t condition_index = 0;
};

struct Scene {
  std::string id;
  std::int64_t height = 0, width = 0;
  double z_near = 0, z_far = 0;
  double world_scale = 1.0;  // world -> normalised [-1, 1]^3 coordinates
  conditioning::ConditionTrack track;
  std::vector<CameraFrame> frames;

  std::int64_t size() const { return static_cast<std::int64_t>(frames.size()); }
};

/// Reads and validates a scene. Every manifest invariant is checked before
/// returning; violations raise DataError naming the offending frame.
Scene load_scene(const std::filesystem::path& dir);

/// Writes manifest and images. The directory is created if needed.
void save_scene(const std::filesystem::path& dir, const Scene& scene);

std::string frame_file_name(std::int64_t index);

}  // namespace dfrf::dataio
