#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "dfrf/diffmath/kernels.hpp"

namespace k = dfrf::kernels;

namespace {

template <typename Real>
std::vector<Real> random_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Real> v(n);
  for (auto& x : v) x = static_cast<Real>(u(rng));
  return v;
}

template <typename Real>
void expect_close(const std::vector<Real>& a, const std::vector<Real>& b, double tol, const char* what) {
  ASSERT_EQ(a.size(), b.size()) << what;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])) / std::max(1.0, std::abs(double(b[i]))));
  EXPECT_LE(worst, tol) << what;
}

template <typename Real>
bool bit_identical(const std::vector<Real>& a, const std::vector<Real>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(Real)) == 0;
}

// Runs `fn` with the given worker count and restores the previous one.
template <typename Fn>
void with_threads(int n, Fn&& fn) {
  const int saved = k::worker_threads();
  k::set_worker_threads(n);
  fn();
  k::set_worker_threads(saved);
}

}  // namespace

template <typename Real>
class KernelAgreement : public ::testing::Test {
 protected:
  static constexpr double tol = sizeof(Real) == 4 ? 2e-5 : 1e-12;
};
using RealTypes = ::testing::Types<float, double>;
TYPED_TEST_SUITE(KernelAgreement, RealTypes);

TYPED_TEST(KernelAgreement, Gemm) {
  using Real = TypeParam;
  std::mt19937_64 rng(1);
  struct Dims { std::int64_t m, n, k; };
  for (Dims d : {Dims{1, 1, 1}, Dims{7, 3, 5}, Dims{33, 1, 300}, Dims{65, 47, 19}, Dims{130, 129, 513}, Dims{9, 64, 2}}) {
    for (auto ta : {k::Trans::No, k::Trans::Yes}) {
      for (auto tb : {k::Trans::No, k::Trans::Yes}) {
        for (bool acc : {false, true}) {
          auto a = random_vec<Real>(d.m * d.k, rng);
          auto b = random_vec<Real>(d.k * d.n, rng);
          auto c0 = random_vec<Real>(d.m * d.n, rng);
          auto c_ser = c0, c_par = c0;
          k::serial::gemm(ta, tb, d.m, d.n, d.k, a.data(), b.data(), c_ser.data(), acc);
          k::parallel::gemm(ta, tb, d.m, d.n, d.k, a.data(), b.data(), c_par.data(), acc);
          expect_close(c_par, c_ser, this->tol * std::sqrt(double(d.k)), "gemm");
        }
      }
    }
  }
}

TYPED_TEST(KernelAgreement, Im2colAndCol2im) {
  using Real = TypeParam;
  std::mt19937_64 rng(2);
  const std::int64_t n = 2, h = 5, w = 7, c = 3;
  auto x = random_vec<Real>(n * h * w * c, rng);
  std::vector<Real> cs(n * h * w * 9 * c), cp(cs.size());
  k::serial::im2col3x3(x.data(), n, h, w, c, cs.data());
  k::parallel::im2col3x3(x.data(), n, h, w, c, cp.data());
  EXPECT_TRUE(bit_identical(cs, cp));

  auto dcols = random_vec<Real>(cs.size(), rng);
  auto dx0 = random_vec<Real>(x.size(), rng);
  auto ds = dx0, dp = dx0;
  k::serial::col2im3x3(dcols.data(), n, h, w, c, ds.data());
  k::parallel::col2im3x3(dcols.data(), n, h, w, c, dp.data());
  expect_close(dp, ds, this->tol, "col2im");

  // Adjointness: <im2col(x), y> == <x, col2im(y)>.
  double lhs = 0.0, rhs = 0.0;
  std::vector<Real> adj(x.size(), Real(0));
  k::parallel::col2im3x3(dcols.data(), n, h, w, c, adj.data());
  for (std::size_t i = 0; i < cs.size(); ++i) lhs += double(cs[i]) * double(dcols[i]);
  for (std::size_t i = 0; i < x.size(); ++i) rhs += double(x[i]) * double(adj[i]);
  EXPECT_NEAR(lhs, rhs, this->tol * 100);
}

TYPED_TEST(KernelAgreement, GatherAndScatter) {
  using Real = TypeParam;
  std::mt19937_64 rng(3);
  const std::int64_t rows = 11, cols = 37;
  auto table = random_vec<Real>(rows * cols, rng);
  std::uniform_int_distribution<std::int64_t> pick(-1, rows - 1);
  std::vector<std::int64_t> index(500);
  for (auto& i : index) i = pick(rng);

  std::vector<Real> gs(index.size() * cols), gp(gs.size());
  k::serial::gather_rows(table.data(), cols, index, gs.data());
  k::parallel::gather_rows(table.data(), cols, index, gp.data());
  EXPECT_TRUE(bit_identical(gs, gp));
  for (std::size_t r = 0; r < index.size(); ++r)
    if (index[r] < 0) {
      EXPECT_EQ(gs[r * cols], Real(0));
    }

  auto d_out = random_vec<Real>(gs.size(), rng);
  std::vector<Real> ss(table.size(), Real(0)), sp(table.size(), Real(0));
  k::serial::scatter_add_rows(d_out.data(), cols, index, ss.data());
  k::parallel::scatter_add_rows(d_out.data(), cols, index, sp.data());
  // Both accumulate each destination in row order.
  EXPECT_TRUE(bit_identical(ss, sp));
}

TYPED_TEST(KernelAgreement, Bilinear) {
  using Real = TypeParam;
  std::mt19937_64 rng(4);
  const std::int64_t maps = 3, h = 6, w = 9, depth = 5, rows = 400;
  auto m = random_vec<Real>(maps * h * w * depth, rng);
  // Includes coordinates outside the map on every side.
  auto coords = random_vec<Real>(rows * 2, rng, -2.0, 11.0);
  std::uniform_int_distribution<std::int64_t> pick(-1, maps - 1);
  std::vector<std::int64_t> map_of_row(rows);
  for (auto& i : map_of_row) i = pick(rng);

  std::vector<Real> os(rows * depth), op(os.size());
  k::serial::bilinear_forward(m.data(), h, w, depth, coords.data(), map_of_row, os.data());
  k::parallel::bilinear_forward(m.data(), h, w, depth, coords.data(), map_of_row, op.data());
  expect_close(op, os, this->tol, "bilinear forward");

  auto d_out = random_vec<Real>(os.size(), rng);
  std::vector<Real> dms(m.size(), Real(0)), dmp(m.size(), Real(0));
  std::vector<Real> dcs(coords.size(), Real(0)), dcp(coords.size(), Real(0));
  k::serial::bilinear_backward(m.data(), h, w, depth, coords.data(), map_of_row, d_out.data(), dms.data(), dcs.data());
  k::parallel::bilinear_backward(m.data(), h, w, depth, coords.data(), map_of_row, d_out.data(), dmp.data(), dcp.data());
  expect_close(dmp, dms, this->tol, "bilinear d_maps");
  expect_close(dcp, dcs, this->tol, "bilinear d_coords");

  // Either sink may be absent.
  std::vector<Real> only_maps(m.size(), Real(0));
  k::parallel::bilinear_backward(m.data(), h, w, depth, coords.data(), map_of_row, d_out.data(), only_maps.data(),
                                 static_cast<Real*>(nullptr));
  EXPECT_TRUE(bit_identical(only_maps, dmp));
}

TYPED_TEST(KernelAgreement, Composite) {
  using Real = TypeParam;
  std::mt19937_64 rng(5);
  const std::int64_t rays = 77, samples = 13;
  auto sigma = random_vec<Real>(rays * samples, rng, 0.0, 5.0);
  auto rgb = random_vec<Real>(rays * samples * 3, rng, 0.0, 1.0);
  auto deltas = random_vec<Real>(rays * samples, rng, 0.01, 0.2);
  auto bg = random_vec<Real>(rays * 3, rng, 0.0, 1.0);

  std::vector<Real> os(rays * 3), op(os.size()), ws(rays * samples), wp(ws.size());
  k::serial::composite_forward(sigma.data(), rgb.data(), deltas.data(), bg.data(), rays, samples, os.data(), ws.data());
  k::parallel::composite_forward(sigma.data(), rgb.data(), deltas.data(), bg.data(), rays, samples, op.data(), wp.data());
  expect_close(op, os, this->tol, "composite out");
  expect_close(wp, ws, this->tol, "composite weights");

  // With the terminal sample opaque the weights form a partition of unity.
  for (std::int64_t r = 0; r < rays; ++r) {
    double total = 0.0;
    for (std::int64_t s = 0; s < samples; ++s) total += double(wp[r * samples + s]);
    EXPECT_NEAR(total, 1.0, 1e-5);
  }

  auto d_out = random_vec<Real>(os.size(), rng);
  std::vector<Real> dss(sigma.size(), Real(0)), dsp(sigma.size(), Real(0));
  std::vector<Real> drs(rgb.size(), Real(0)), drp(rgb.size(), Real(0));
  k::serial::composite_backward(sigma.data(), rgb.data(), deltas.data(), bg.data(), rays, samples, d_out.data(),
                                dss.data(), drs.data());
  k::parallel::composite_backward(sigma.data(), rgb.data(), deltas.data(), bg.data(), rays, samples, d_out.data(),
                                  dsp.data(), drp.data());
  expect_close(dsp, dss, this->tol * 10, "composite d_sigma");
  expect_close(drp, drs, this->tol, "composite d_rgb");
}

TEST(KernelDeterminism, ParallelResultsIgnoreThreadCount) {
  std::mt19937_64 rng(6);
  const std::int64_t m = 203, n = 96, kk = 300;
  auto a = random_vec<float>(m * kk, rng);
  auto b = random_vec<float>(kk * n, rng);
  std::vector<float> c1(m * n), c4(m * n);
  with_threads(1, [&] { k::parallel::gemm(k::Trans::Yes, k::Trans::No, m, n, kk, a.data(), b.data(), c1.data(), false); });
  with_threads(4, [&] { k::parallel::gemm(k::Trans::Yes, k::Trans::No, m, n, kk, a.data(), b.data(), c4.data(), false); });
  EXPECT_TRUE(bit_identical(c1, c4));

  const std::int64_t cols = 64;
  std::vector<std::int64_t> index(5000);
  std::uniform_int_distribution<std::int64_t> pick(0, 40);
  for (auto& i : index) i = pick(rng);
  auto d_out = random_vec<float>(index.size() * cols, rng);
  std::vector<float> t1(41 * cols, 0.0f), t4(41 * cols, 0.0f);
  with_threads(1, [&] { k::parallel::scatter_add_rows(d_out.data(), cols, index, t1.data()); });
  with_threads(4, [&] { k::parallel::scatter_add_rows(d_out.data(), cols, index, t4.data()); });
  EXPECT_TRUE(bit_identical(t1, t4));
}

TEST(BilinearTap, ClampsAndLocatesCell) {
  auto t = k::bilinear_tap(2.25, 1.5, 4, 5);
  EXPECT_EQ(t.x0, 2);
  EXPECT_EQ(t.y0, 1);
  EXPECT_DOUBLE_EQ(t.fx, 0.25);
  EXPECT_DOUBLE_EQ(t.fy, 0.5);
  EXPECT_FALSE(t.clamped_u);

  auto edge = k::bilinear_tap(4.0, 3.0, 4, 5);  // exactly on the last texel
  EXPECT_EQ(edge.x0, 3);
  EXPECT_DOUBLE_EQ(edge.fx, 1.0);
  EXPECT_FALSE(edge.clamped_u);

  auto out = k::bilinear_tap(-3.0, 9.0, 4, 5);
  EXPECT_TRUE(out.clamped_u);
  EXPECT_TRUE(out.clamped_v);
  EXPECT_EQ(out.x0, 0);
  EXPECT_DOUBLE_EQ(out.fx, 0.0);
  EXPECT_EQ(out.y1, 3);

  auto nan = k::bilinear_tap(std::nan(""), 0.0, 4, 5);
  EXPECT_TRUE(nan.clamped_u);
  EXPECT_TRUE(std::isfinite(nan.fx));
}
