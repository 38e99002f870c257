#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "dfrf/diffmath/tensor.hpp"

// Pinhole cameras. Poses map world to camera (p_cam = R p + T); the camera
// centre and camera-to-world rotation are derived on demand, never stored.
// Pixel (i, j) covers [i, i+1) x [j, j+1), so its centre is (i+0.5, j+0.5).

namespace dfrf::geometry {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Intrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;

  Mat3 matrix() const;
  bool valid() const { return fx > 0 && fy > 0; }
};

struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 T = Vec3::Zero();

  Vec3 camera_center() const { return -R.transpose() * T; }
  /// RᵀR = I and det R = +1, both within `tol`.
  bool is_rotation(double tol = 1e-6) const;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
  double z_near, z_far;
};

struct ImageCoord {
  double u, v;
};

struct Projection {
  ImageCoord at;
  double depth;
  bool valid;  // false when the point is at or behind the camera plane
  Eigen::Matrix<double, 2, 3> jacobian;  // d(u, v) / d(world point)
};

inline constexpr double kMinDepth = 1e-8;

Projection project_point(const Vec3& p, const Intrinsics& K, const Pose& pose);

Ray generate_ray(const Intrinsics& K, const Pose& pose, std::int64_t px, std::int64_t py, double z_near,
                 double z_far);

/// n depths along the ray, one per equal-width bin between z_near and z_far:
/// bin midpoints, or a uniform draw inside each bin when jittering.
std::vector<double> stratified_samples(const Ray& ray, int n_samples, bool jitter, std::mt19937_64& rng);

/// Rotation taking +z to `forward` with the image's v axis along -up, for a
/// camera at `eye` looking at `target`.
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

/// Differentiable batch projection: points [P, 3] -> pixel coordinates
/// [P, 2] as (u, v). Points at or behind the camera are reported in `valid`
/// and produce (0, 0) with zero gradient.
template <typename Real>
diffmath::Tensor<Real> project_points(const diffmath::Tensor<Real>& points, const Intrinsics& K, const Pose& pose,
                                      std::vector<std::uint8_t>* valid = nullptr);

}  // namespace dfrf::geometry
