#include "dfrf/geometry/camera.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Geometry>

#include "dfrf/diffmath/ops.hpp"

namespace dfrf::geometry {

Mat3 Intrinsics::matrix() const {
  Mat3 k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

bool Pose::is_rotation(double tol) const {
  const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

Projection project_point(const Vec3& p, const Intrinsics& K, const Pose& pose) {
  const Vec3 c = pose.R * p + pose.T;
  Projection out{{0, 0}, c.z(), false, Eigen::Matrix<double, 2, 3>::Zero()};
  if (!(c.z() > kMinDepth)) return out;
  const double iz = 1.0 / c.z();
  out.at = {K.fx * c.x() * iz + K.cx, K.fy * c.y() * iz + K.cy};
  out.valid = true;
  // d(u,v)/d(cam) then chain through R.
  Eigen::Matrix<double, 2, 3> dcam;
  dcam << K.fx * iz, 0, -K.fx * c.x() * iz * iz, 0, K.fy * iz, -K.fy * c.y() * iz * iz;
  out.jacobian = dcam * pose.R;
  return out;
}

Ray generate_ray(const Intrinsics& K, const Pose& pose, std::int64_t px, std::int64_t py, double z_near,
                 double z_far) {
  const Vec3 pixel((static_cast<double>(px) + 0.5 - K.cx) / K.fx, (static_cast<double>(py) + 0.5 - K.cy) / K.fy, 1.0);
  return {pose.camera_center(), (pose.R.transpose() * pixel).normalized(), z_near, z_far};
}

std::vector<double> stratified_samples(const Ray& ray, int n_samples, bool jitter, std::mt19937_64& rng) {
  if (n_samples < 2) throw std::invalid_argument("stratified_samples: need at least 2 samples");
  const double width = (ray.z_far - ray.z_near) / n_samples;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> t(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) t[i] = ray.z_near + (i + (jitter ? unit(rng) : 0.5)) * width;
  return t;
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  Pose pose;
  pose.R.row(0) = right.transpose();
  pose.R.row(1) = down.transpose();
  pose.R.row(2) = forward.transpose();
  pose.T = -pose.R * eye;
  return pose;
}

template <typename Real>
diffmath::Tensor<Real> project_points(const diffmath::Tensor<Real>& points, const Intrinsics& K, const Pose& pose,
                                      std::vector<std::uint8_t>* valid) {
  if (points.rank() != 2 || points.dim(1) != 3)
    diffmath::throw_shape_error("project_points", points.shape(), {-1, 3});
  const std::int64_t n = points.dim(0);
  std::vector<Real> uv(static_cast<std::size_t>(2 * n));
  std::vector<Eigen::Matrix<double, 2, 3>> jac(static_cast<std::size_t>(n));
  if (valid) valid->assign(static_cast<std::size_t>(n), 0);
  const auto p = points.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto pr = project_point(Vec3(p[3 * i], p[3 * i + 1], p[3 * i + 2]), K, pose);
    uv[2 * i] = static_cast<Real>(pr.at.u);
    uv[2 * i + 1] = static_cast<Real>(pr.at.v);
    jac[i] = pr.jacobian;
    if (valid) (*valid)[i] = pr.valid;
  }
  return diffmath::record_op<Real>({n, 2}, std::move(uv), {points}, [points, jac = std::move(jac)](const auto& out) {
    Real* dp = diffmath::grad_sink(points);
    for (std::size_t i = 0; i < jac.size(); ++i)
      for (int c = 0; c < 3; ++c)
        dp[3 * i + c] += static_cast<Real>(jac[i](0, c) * out.grad[2 * i] + jac[i](1, c) * out.grad[2 * i + 1]);
  });
}

template diffmath::Tensor<float> project_points(const diffmath::Tensor<float>&, const Intrinsics&, const Pose&,
                                                std::vector<std::uint8_t>*);
template diffmath::Tensor<double> project_points(const diffmath::Tensor<double>&, const Intrinsics&, const Pose&,
                                                 std::vector<std::uint8_t>*);

}  // namespace dfrf::geometry
