#include "dfrf/dataio/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace dfrf::dataio {

using geometry::Vec3;

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

// Everything about a scene's look that the seed decides.
struct Identity {
  double radius, base_opening;
  Vec3 color_a, color_b, inner, background;
  Vec3 stripe_axis;
  double stripe_freq, stripe_phase;
  Vec3 light;
  double signal_period1, signal_period2, signal_phase1, signal_phase2;
  double orbit_period, orbit_phase, elevation;
  std::vector<double> distractor_freq, distractor_phase;
};

Identity draw_identity(const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  auto color = [&](double lo, double hi) { return Vec3(range(lo, hi), range(lo, hi), range(lo, hi)); };
  Identity id;
  id.radius = range(0.62, 0.74);
  id.base_opening = range(0.12, 0.25);
  id.color_a = color(0.45, 0.95);
  id.color_b = color(0.05, 0.45);
  id.inner = Vec3(range(0.45, 0.6), range(0.04, 0.1), range(0.06, 0.12));
  id.background = color(0.55, 0.95);
  std::normal_distribution<double> n(0.0, 1.0);
  id.stripe_axis = Vec3(n(rng), n(rng), n(rng)).normalized();
  id.stripe_freq = range(2.0, 3.5);
  id.stripe_phase = range(0.0, kTau);
  id.light = Vec3(range(-0.5, 0.5), range(0.4, 0.8), 0.8).normalized();
  id.signal_period1 = range(12.0, 20.0);
  id.signal_period2 = range(5.0, 9.0);
  id.signal_phase1 = range(0.0, kTau);
  id.signal_phase2 = range(0.0, kTau);
  id.orbit_period = range(30.0, 45.0);
  id.orbit_phase = range(0.0, kTau);
  id.elevation = range(0.0, 0.2);
  for (std::int64_t c = 1; c < spec.condition_dim; ++c) {
    id.distractor_freq.push_back(range(0.05, 1.0));
    id.distractor_phase.push_back(range(0.0, kTau));
  }
  return id;
}

// Rotation about the x axis.
Vec3 rot_x(const Vec3& p, double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {p.x(), c * p.y() - s * p.z(), s * p.y() + c * p.z()};
}

struct Jaws {
  double radius, opening;

  // Point in the upper / lower jaw's rest frame. The upper jaw is lifted by
  // half the opening and the lower one dropped by the same amount.
  Vec3 upper_local(const Vec3& p) const { return rot_x(p, opening / 2); }
  Vec3 lower_local(const Vec3& p) const { return rot_x(p, -opening / 2); }

  static double half_ball(const Vec3& q, double radius, double side) {
    return std::max(q.norm() - radius, -side * q.y());
  }
  double upper(const Vec3& p) const { return half_ball(upper_local(p), radius, +1); }
  double lower(const Vec3& p) const { return half_ball(lower_local(p), radius, -1); }
  double sdf(const Vec3& p) const { return std::min(upper(p), lower(p)); }

  Vec3 normal(const Vec3& p) const {
    const double h = 1e-5;
    Vec3 g(sdf(p + Vec3(h, 0, 0)) - sdf(p - Vec3(h, 0, 0)), sdf(p + Vec3(0, h, 0)) - sdf(p - Vec3(0, h, 0)),
           sdf(p + Vec3(0, 0, h)) - sdf(p - Vec3(0, 0, h)));
    return g.normalized();
  }
};

Vec3 shade(const Identity& id, const Jaws& jaws, const Vec3& p) {
  const bool is_upper = jaws.upper(p) <= jaws.lower(p);
  const Vec3 q = is_upper ? jaws.upper_local(p) : jaws.lower_local(p);
  // The flat cut face is where the half-space term of the jaw's SDF wins.
  const double side = is_upper ? 1.0 : -1.0;
  const bool cut_face = -side * q.y() > q.norm() - jaws.radius;
  Vec3 albedo;
  if (cut_face) {
    albedo = id.inner;
  } else {
    const Vec3 dir = q.normalized();
    const double t = 0.5 + 0.5 * std::sin(id.stripe_freq * std::numbers::pi * dir.dot(id.stripe_axis) + id.stripe_phase);
    albedo = id.color_b + t * (id.color_a - id.color_b);
  }
  const double lambert = std::max(0.0, jaws.normal(p).dot(id.light));
  return albedo * (0.35 + 0.65 * lambert);
}

// Sphere tracing inside the bounding ball; returns false on a miss.
bool trace(const Jaws& jaws, const Vec3& origin, const Vec3& dir, Vec3& hit) {
  const double b = origin.dot(dir);
  const double c = origin.squaredNorm() - jaws.radius * jaws.radius * 1.0001;
  const double disc = b * b - c;
  if (disc <= 0) return false;
  double t = std::max(0.0, -b - std::sqrt(disc));
  const double t_exit = -b + std::sqrt(disc);
  for (int step = 0; step < 200 && t <= t_exit; ++step) {
    const Vec3 p = origin + t * dir;
    const double d = jaws.sdf(p);
    if (d < 1e-6) {
      hit = p;
      return true;
    }
    t += d;
  }
  return false;
}

}  // namespace

SyntheticFrameState synthetic_frame_state(const SyntheticSpec& spec, std::int64_t frame) {
  const Identity id = draw_identity(spec);
  const double t = static_cast<double>(frame);
  const double s = std::clamp(0.5 + 0.3 * std::sin(kTau * t / id.signal_period1 + id.signal_phase1) +
                                  0.2 * std::sin(kTau * t / id.signal_period2 + id.signal_phase2),
                              0.0, 1.0);
  const double azimuth = spec.orbit_degrees * std::numbers::pi / 180.0 *
                         std::sin(kTau * t / id.orbit_period + id.orbit_phase);
  const double elevation = id.elevation;
  const Vec3 eye = spec.camera_radius * Vec3(std::cos(elevation) * std::sin(azimuth), std::sin(elevation),
                                             std::cos(elevation) * std::cos(azimuth));
  return {s, id.base_opening + spec.amplitude * s, eye};
}

Scene generate_synthetic_scene(const SyntheticSpec& spec) {
  if (spec.resolution < 16) throw std::invalid_argument("synthetic scene: resolution must be at least 16");
  if (spec.n_frames < 1 || spec.condition_dim < 1 || spec.supersample < 1)
    throw std::invalid_argument("synthetic scene: counts must be positive");
  const Identity id = draw_identity(spec);
  const std::int64_t res = spec.resolution;
  Scene scene;
  scene.id = "synthetic-" + std::to_string(spec.seed);
  scene.height = scene.width = res;
  scene.z_near = spec.camera_radius - 1.0;
  scene.z_far = spec.camera_radius + 1.0;
  scene.world_scale = 1.0;
  scene.track.dim = spec.condition_dim;
  const double focal = 0.5 * static_cast<double>(res) / std::tan(0.5 * spec.fov_degrees * std::numbers::pi / 180.0);
  const geometry::Intrinsics K{focal, focal, 0.5 * static_cast<double>(res), 0.5 * static_cast<double>(res)};

  // Pixels are stored already quantised to 8 bits so the in-memory scene
  // equals what load_scene reads back.
  Image background(res, res);
  for (std::int64_t i = 0; i < res * res; ++i)
    for (int c = 0; c < 3; ++c) background.rgb[3 * i + c] = quantize(id.background[c]) / 255.0;

  for (std::int64_t f = 0; f < spec.n_frames; ++f) {
    const auto state = synthetic_frame_state(spec, f);
    std::vector<double> cond(static_cast<std::size_t>(spec.condition_dim));
    cond[0] = state.signal;
    for (std::int64_t c = 1; c < spec.condition_dim; ++c)
      cond[c] = std::sin(id.distractor_freq[c - 1] * static_cast<double>(f) + id.distractor_phase[c - 1]);
    scene.track.frames.push_back(cond);

    CameraFrame frame;
    frame.K = K;
    frame.pose = geometry::look_at(state.eye, Vec3::Zero(), Vec3::UnitY());
    frame.condition_index = f;
    frame.background = background;
    frame.image = background;
    const Jaws jaws{id.radius, state.opening};
    const Vec3 origin = frame.pose.camera_center();
    const int ss = spec.supersample;
    for (std::int64_t y = 0; y < res; ++y) {
      for (std::int64_t x = 0; x < res; ++x) {
        Vec3 sum = Vec3::Zero();
        for (int j = 0; j < ss; ++j) {
          for (int i = 0; i < ss; ++i) {
            const Vec3 pix((static_cast<double>(x) + (i + 0.5) / ss - K.cx) / K.fx,
                           (static_cast<double>(y) + (j + 0.5) / ss - K.cy) / K.fy, 1.0);
            const Vec3 dir = (frame.pose.R.transpose() * pix).normalized();
            Vec3 hit;
            sum += trace(jaws, origin, dir, hit) ? shade(id, jaws, hit) : id.background;
          }
        }
        sum /= static_cast<double>(ss * ss);
        for (int c = 0; c < 3; ++c) frame.image.pixel(y, x)[c] = quantize(sum[c]) / 255.0;
      }
    }
    scene.frames.push_back(std::move(frame));
  }
  return scene;
}

Scene write_synthetic_scene(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  Scene scene = generate_synthetic_scene(spec);
  save_scene(dir, scene);
  return scene;
}

}  // namespace dfrf::dataio
