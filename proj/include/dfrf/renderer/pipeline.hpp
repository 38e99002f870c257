#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dfrf/dataio/scene.hpp"
#include "dfrf/renderer/model.hpp"
#include "dfrf/renderer/render.hpp"

// The full differentiable path from rays to pixel colours:
// project samples into every reference, read pixel-aligned features
// (nearest in the coarse stage; warped bilinear in the joint stage), fuse
// them across references, evaluate the conditioned field and composite.

namespace dfrf::renderer {

enum class Stage { Coarse, Joint };

const char* stage_name(Stage stage);

struct SceneBounds {
  double z_near, z_far, world_scale;
};

inline SceneBounds bounds_of(const dataio::Scene& scene) { return {scene.z_near, scene.z_far, scene.world_scale}; }

/// Reference frames with their feature maps.
template <typename Real>
struct ReferenceSet {
  Tensor<Real> maps;  // [N, H, W, D]
  std::vector<geometry::Intrinsics> intrinsics;
  std::vector<geometry::Pose> poses;

  std::int64_t size() const { return static_cast<std::int64_t>(poses.size()); }
};

/// Runs the feature extractor over the chosen frames (recorded on the
/// active tape, if any).
template <typename Real>
ReferenceSet<Real> prepare_references(const Model<Real>& model, const dataio::Scene& scene,
                                      std::span<const std::int64_t> frames);

struct RayBatch {
  std::int64_t rays = 0, samples = 0;
  double z_far = 0;
  std::vector<double> origins, directions;  // [B, 3]
  std::vector<double> depths;               // [B, S]
  std::vector<double> background;           // [B, 3]
  std::vector<double> target;               // [B, 3]
};

/// Rays through the given pixel indices (y * W + x) of a frame. Depths are
/// stratified: jittered when `rng` is given, bin midpoints otherwise.
RayBatch make_rays(const dataio::CameraFrame& frame, std::span<const std::int64_t> pixels, int samples,
                   const SceneBounds& bounds, std::mt19937_64* rng);

template <typename Real>
struct ForwardResult {
  Tensor<Real> rgb;      // [B, 3]
  Tensor<Real> offsets;  // [N, P, 2]; undefined in the coarse stage
  Tensor<Real> reg;      // offset regulariser; undefined in the coarse stage
  std::vector<Real> weights;   // [B, S] compositing weights
  std::vector<double> alphas;  // [P] per-point opacity the regulariser was weighted with
};

template <typename Real>
ForwardResult<Real> forward(const Model<Real>& model, const ReferenceSet<Real>& refs, const Tensor<Real>& cond,
                            const RayBatch& rays, Stage stage, double world_scale);

struct RenderSettings {
  int samples = 64;
  std::int64_t chunk = 4096;
  Stage stage = Stage::Joint;
};

/// Deterministic full-frame render (midpoint depths), evaluated in ray
/// chunks. `cond` is the filtered condition vector [d_a].
template <typename Real>
dataio::Image render_frame(const Model<Real>& model, const dataio::CameraFrame& camera,
                           const ReferenceSet<Real>& refs, const Tensor<Real>& cond, const SceneBounds& bounds,
                           const RenderSettings& settings);

}  // namespace dfrf::renderer
