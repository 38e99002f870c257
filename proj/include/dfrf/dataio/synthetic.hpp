#pragma once

#include <cstdint>
#include <filesystem>

#include "dfrf/dataio/scene.hpp"

// Procedural stand-in for a talking-head clip: a textured ball split into
// two jaws that open and close about a horizontal hinge, driven by a scalar
// signal s_t. Frames are ray traced against the analytic signed distance
// function (never the neural field) while the camera orbits the object.

namespace dfrf::dataio {

struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::int64_t n_frames = 100;
  std::int64_t resolution = 64;
  double amplitude = 0.8;        // extra jaw opening at s_t = 1, radians
  double orbit_degrees = 20.0;   // azimuth swing of the camera
  std::int64_t condition_dim = 32;
  double fov_degrees = 40.0;
  double camera_radius = 3.0;
  int supersample = 2;           // per axis
};

/// Per-frame quantities the generator derives from the spec.
struct SyntheticFrameState {
  double signal;         // s_t, emitted as condition channel 0
  double opening;        // total jaw opening angle, radians
  geometry::Vec3 eye;    // camera centre in world coordinates
};

SyntheticFrameState synthetic_frame_state(const SyntheticSpec& spec, std::int64_t frame);

Scene generate_synthetic_scene(const SyntheticSpec& spec);

/// Generates and writes the scene to `dir`.
Scene write_synthetic_scene(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace dfrf::dataio
