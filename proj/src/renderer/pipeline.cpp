#include "dfrf/renderer/pipeline.hpp"

#include <cmath>
#include <stdexcept>

#include "dfrf/conditioning/conditioning.hpp"

namespace dfrf::renderer {

namespace dm = diffmath;

const char* stage_name(Stage stage) { return stage == Stage::Coarse ? "coarse" : "joint"; }

template <typename Real>
ReferenceSet<Real> prepare_references(const Model<Real>& model, const dataio::Scene& scene,
                                      std::span<const std::int64_t> frames) {
  if (frames.empty()) throw std::invalid_argument("at least one reference frame is required");
  const std::int64_t h = scene.height, w = scene.width;
  std::vector<Real> pixels;
  pixels.reserve(static_cast<std::size_t>(frames.size() * h * w * 3));
  ReferenceSet<Real> refs;
  for (auto f : frames) {
    const auto& frame = scene.frames.at(static_cast<std::size_t>(f));
    for (double v : frame.image.rgb) pixels.push_back(static_cast<Real>(v));
    refs.intrinsics.push_back(frame.K);
    refs.poses.push_back(frame.pose);
  }
  refs.maps = model.extractor(Tensor<Real>({static_cast<std::int64_t>(frames.size()), h, w, 3}, std::move(pixels)));
  return refs;
}

RayBatch make_rays(const dataio::CameraFrame& frame, std::span<const std::int64_t> pixels, int samples,
                   const SceneBounds& bounds, std::mt19937_64* rng) {
  RayBatch batch;
  batch.rays = static_cast<std::int64_t>(pixels.size());
  batch.samples = samples;
  batch.z_far = bounds.z_far;
  std::mt19937_64 unused(0);
  const std::int64_t width = frame.image.width;
  for (auto idx : pixels) {
    const std::int64_t y = idx / width, x = idx % width;
    const auto ray = geometry::generate_ray(frame.K, frame.pose, x, y, bounds.z_near, bounds.z_far);
    const auto t = geometry::stratified_samples(ray, samples, rng != nullptr, rng ? *rng : unused);
    batch.origins.insert(batch.origins.end(), ray.origin.data(), ray.origin.data() + 3);
    batch.directions.insert(batch.directions.end(), ray.direction.data(), ray.direction.data() + 3);
    batch.depths.insert(batch.depths.end(), t.begin(), t.end());
    const double* bg = frame.background.pixel(y, x);
    const double* im = frame.image.pixel(y, x);
    batch.background.insert(batch.background.end(), bg, bg + 3);
    batch.target.insert(batch.target.end(), im, im + 3);
  }
  return batch;
}

template <typename Real>
ForwardResult<Real> forward(const Model<Real>& model, const ReferenceSet<Real>& refs, const Tensor<Real>& cond,
                            const RayBatch& rays, Stage stage, double world_scale) {
  const std::int64_t b = rays.rays, s = rays.samples, p = b * s, n = refs.size();
  const std::int64_t d = refs.maps.dim(3);

  // Sample points (world) and their view directions.
  std::vector<double> points(static_cast<std::size_t>(3 * p)), dirs(static_cast<std::size_t>(3 * p));
  std::vector<double> scaled(points.size());
  for (std::int64_t r = 0; r < b; ++r)
    for (std::int64_t k = 0; k < s; ++k) {
      const std::int64_t i = r * s + k;
      for (int c = 0; c < 3; ++c) {
        points[3 * i + c] = rays.origins[3 * r + c] + rays.depths[i] * rays.directions[3 * r + c];
        dirs[3 * i + c] = rays.directions[3 * r + c];
        scaled[3 * i + c] = points[3 * i + c] * world_scale;
      }
    }
  const auto encoded = radiance::positional_encode<Real>(scaled, radiance::kPositionLevels);

  // Reference-major projections into feature-grid coordinates: grid node
  // (i, j) is the centre of pixel (i, j), i.e. projection minus one half.
  std::vector<double> grid(static_cast<std::size_t>(2 * n * p));
  std::vector<std::int64_t> which(static_cast<std::size_t>(n * p));
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(n * p));  // point-major, for the aggregator
  for (std::int64_t ref = 0; ref < n; ++ref)
    for (std::int64_t i = 0; i < p; ++i) {
      const auto pr = geometry::project_point(geometry::Vec3(points[3 * i], points[3 * i + 1], points[3 * i + 2]),
                                              refs.intrinsics[ref], refs.poses[ref]);
      const std::int64_t row = ref * p + i;
      grid[2 * row] = pr.at.u - 0.5;
      grid[2 * row + 1] = pr.at.v - 0.5;
      which[row] = pr.valid ? ref : -1;
      valid[i * n + ref] = pr.valid;
    }

  ForwardResult<Real> result;
  auto features = dm::reshape(conditioning::sample_nearest<Real>(refs.maps, grid, which), {n, p, d});
  if (stage == Stage::Joint) {
    const auto code = dm::concat<Real>({encoded, dm::broadcast(cond, {p})}, 1);
    result.offsets = model.warp(code, features);
    std::vector<Real> base(grid.begin(), grid.end());
    const auto warped = warpfield::warp(Tensor<Real>({n * p, 2}, std::move(base)), dm::reshape(result.offsets, {n * p, 2}));
    features = dm::reshape(conditioning::sample_bilinear(refs.maps, warped, which), {n, p, d});
  }
  const auto fused = model.aggregator(dm::swap_leading(features), valid);
  const auto out = model.field.evaluate(encoded, dirs, cond, fused);

  const auto deltas = interval_lengths(rays.depths, s, rays.z_far);
  auto comp = composite(dm::reshape(out.sigma, {b, s}), dm::reshape(out.rgb, {b, s, 3}), deltas, rays.background);
  result.rgb = comp.rgb;
  result.weights = std::move(comp.weights);

  if (stage == Stage::Joint) {
    // Per-point opacity 1 - exp(-sigma delta), read as a constant.
    auto& alphas = result.alphas;
    alphas.resize(static_cast<std::size_t>(p));
    for (std::int64_t i = 0; i < p; ++i) alphas[i] = 1.0 - std::exp(-static_cast<double>(out.sigma.data()[i]) * deltas[i]);
    result.reg = warpfield::offset_regularizer(result.offsets, std::span<const double>(alphas));
  }
  return result;
}

template <typename Real>
dataio::Image render_frame(const Model<Real>& model, const dataio::CameraFrame& camera,
                           const ReferenceSet<Real>& refs, const Tensor<Real>& cond, const SceneBounds& bounds,
                           const RenderSettings& settings) {
  if (settings.chunk < 1) throw std::invalid_argument("render: chunk size must be positive");
  const std::int64_t h = camera.image.height, w = camera.image.width;
  dataio::Image image(h, w);
  std::vector<std::int64_t> pixels;
  for (std::int64_t start = 0; start < h * w; start += settings.chunk) {
    const std::int64_t end = std::min(h * w, start + settings.chunk);
    pixels.resize(static_cast<std::size_t>(end - start));
    for (std::int64_t i = start; i < end; ++i) pixels[i - start] = i;
    const auto rays = make_rays(camera, pixels, settings.samples, bounds, nullptr);
    const auto out = forward(model, refs, cond, rays, settings.stage, bounds.world_scale);
    for (std::int64_t i = start; i < end; ++i)
      for (int c = 0; c < 3; ++c) image.rgb[3 * i + c] = static_cast<double>(out.rgb.data()[3 * (i - start) + c]);
  }
  return image;
}

#define DFRF_INSTANTIATE_PIPELINE(Real)                                                                          \
  template ReferenceSet<Real> prepare_references(const Model<Real>&, const dataio::Scene&,                      \
                                                 std::span<const std::int64_t>);                                \
  template ForwardResult<Real> forward(const Model<Real>&, const ReferenceSet<Real>&, const Tensor<Real>&,      \
                                       const RayBatch&, Stage, double);                                         \
  template dataio::Image render_frame(const Model<Real>&, const dataio::CameraFrame&, const ReferenceSet<Real>&, \
                                      const Tensor<Real>&, const SceneBounds&, const RenderSettings&);

DFRF_INSTANTIATE_PIPELINE(float)
DFRF_INSTANTIATE_PIPELINE(double)

}  // namespace dfrf::renderer
