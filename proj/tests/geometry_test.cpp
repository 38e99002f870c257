#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <random>

#include "dfrf/diffmath/gradcheck.hpp"
#include "dfrf/diffmath/ops.hpp"
#include "dfrf/geometry/camera.hpp"

namespace g = dfrf::geometry;
namespace dm = dfrf::diffmath;

namespace {

g::Intrinsics axis_camera() { return {100, 100, 64, 64}; }

g::Pose random_pose(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  g::Pose pose;
  pose.R = q.toRotationMatrix();
  pose.T = g::Vec3(n(rng), n(rng), n(rng)) * 3.0;
  return pose;
}

}  // namespace

TEST(Projection, OpticalAxisHitsPrincipalPoint) {
  auto pr = g::project_point({0, 0, 1}, axis_camera(), {});
  ASSERT_TRUE(pr.valid);
  EXPECT_DOUBLE_EQ(pr.at.u, 64);
  EXPECT_DOUBLE_EQ(pr.at.v, 64);
  EXPECT_DOUBLE_EQ(pr.depth, 1);
}

TEST(Projection, OffsetPoint) {
  auto pr = g::project_point({0.1, 0, 1}, axis_camera(), {});
  EXPECT_NEAR(pr.at.u, 74, 1e-12);
  EXPECT_DOUBLE_EQ(pr.at.v, 64);
}

TEST(Projection, BehindCameraIsInvalid) {
  EXPECT_FALSE(g::project_point({0, 0, -1}, axis_camera(), {}).valid);
  EXPECT_FALSE(g::project_point({1, 1, 0}, axis_camera(), {}).valid);
  EXPECT_TRUE(g::project_point({1, 1, 1e-6}, axis_camera(), {}).valid);
}

TEST(Rays, AxisRay) {
  // Principal point at the centre of pixel (63, 63).
  auto ray = g::generate_ray({100, 100, 63.5, 63.5}, {}, 63, 63, 1, 2);
  EXPECT_NEAR((ray.direction - g::Vec3(0, 0, 1)).norm(), 0, 1e-15);
  EXPECT_EQ(ray.origin, g::Vec3::Zero());
}

TEST(Rays, OriginIsCameraCentre) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    auto pose = random_pose(rng);
    auto ray = g::generate_ray(axis_camera(), pose, 5, 9, 1, 2);
    EXPECT_LT((ray.origin - (-pose.R.transpose() * pose.T)).norm(), 1e-12);
    EXPECT_NEAR(ray.direction.norm(), 1.0, 1e-9);
  }
}

TEST(Rays, RoundTripClosesOnPixelCentre) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> pix(0, 127);
  std::uniform_real_distribution<double> focal(40, 200), near(0.1, 2.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const g::Intrinsics K{focal(rng), focal(rng), 64 + near(rng), 60 + near(rng)};
    const auto pose = random_pose(rng);
    ASSERT_TRUE(pose.is_rotation());
    const int px = pix(rng), py = pix(rng);
    const double zn = near(rng), zf = zn + near(rng) + 1.0;
    const auto ray = g::generate_ray(K, pose, px, py, zn, zf);
    for (double t : {zn, zf}) {
      const auto pr = g::project_point(ray.origin + t * ray.direction, K, pose);
      ASSERT_TRUE(pr.valid);
      worst = std::max({worst, std::abs(pr.at.u - (px + 0.5)), std::abs(pr.at.v - (py + 0.5))});
    }
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Projection, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const g::Intrinsics K{80, 90, 30, 33};
  for (int trial = 0; trial < 50; ++trial) {
    const auto pose = random_pose(rng);
    const auto ray = g::generate_ray(K, pose, trial, 2 * trial % 64, 1, 3);
    const dm::Tensor<double> pts({1, 3}, [&] {
      g::Vec3 p = ray.origin + 2.0 * ray.direction;
      return std::vector<double>{p.x(), p.y(), p.z()};
    }());
    for (int comp = 0; comp < 2; ++comp) {
      std::function<dm::Tensor<double>(const dm::Tensor<double>&)> f = [&](const dm::Tensor<double>& x) {
        return dm::slice(dm::reshape(g::project_points(x, K, pose), {2}), 0, comp, comp + 1);
      };
      EXPECT_LE(dm::grad_check<double>([&](const auto& x) { return dm::sum(f(x)); }, pts, 1e-6), 1e-6);
    }
  }
}

TEST(Samples, MidpointsWithoutJitter) {
  std::mt19937_64 rng(4);
  g::Ray ray{g::Vec3::Zero(), g::Vec3::UnitZ(), 1.0, 2.0};
  auto t = g::stratified_samples(ray, 2, false, rng);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_DOUBLE_EQ(t[0], 1.25);
  EXPECT_DOUBLE_EQ(t[1], 1.75);
  EXPECT_THROW(g::stratified_samples(ray, 1, false, rng), std::invalid_argument);
}

TEST(Samples, JitterStaysInBinsAndIncreases) {
  std::mt19937_64 rng(5);
  g::Ray ray{g::Vec3::Zero(), g::Vec3::UnitZ(), 2.0, 4.0};
  const int n = 16;
  const double width = 2.0 / n;
  for (int trial = 0; trial < 1000; ++trial) {
    auto t = g::stratified_samples(ray, n, true, rng);
    for (int i = 0; i < n; ++i) {
      EXPECT_GE(t[i], 2.0 + i * width);
      EXPECT_LE(t[i], 2.0 + (i + 1) * width);
      if (i > 0) {
        EXPECT_GT(t[i], t[i - 1]);
      }
    }
  }
}

TEST(Samples, JitteredMeanIsBinMidpoint) {
  std::mt19937_64 rng(6);
  g::Ray ray{g::Vec3::Zero(), g::Vec3::UnitZ(), 1.0, 3.0};
  const int n = 8;
  std::vector<double> mean(n, 0.0);
  const int trials = 100000;
  for (int trial = 0; trial < trials; ++trial) {
    auto t = g::stratified_samples(ray, n, true, rng);
    for (int i = 0; i < n; ++i) mean[i] += t[i] / trials;
  }
  for (int i = 0; i < n; ++i) EXPECT_NEAR(mean[i], 1.0 + (i + 0.5) * 0.25, 1e-2);
}

TEST(LookAt, BuildsARotationFacingTheTarget) {
  const g::Vec3 eye(0.3, -0.2, 3.0);
  auto pose = g::look_at(eye, g::Vec3::Zero(), g::Vec3::UnitY());
  EXPECT_TRUE(pose.is_rotation(1e-12));
  EXPECT_LT((pose.camera_center() - eye).norm(), 1e-12);
  auto pr = g::project_point(g::Vec3::Zero(), axis_camera(), pose);
  EXPECT_NEAR(pr.at.u, 64, 1e-9);
  EXPECT_NEAR(pr.at.v, 64, 1e-9);
  // World up appears towards smaller v.
  EXPECT_LT(g::project_point(g::Vec3(0, 0.2, 0), axis_camera(), pose).at.v, 64);
}
