#include "dfrf/renderer/render.hpp"

#include <stdexcept>
#include <string>

#include "dfrf/diffmath/kernels.hpp"

namespace dfrf::renderer {

namespace dm = diffmath;

std::vector<double> interval_lengths(std::span<const double> depths, std::int64_t samples, double z_far) {
  if (samples < 2 || depths.size() % static_cast<std::size_t>(samples) != 0)
    throw std::invalid_argument("render: need at least 2 samples per ray");
  std::vector<double> deltas(depths.size());
  const std::size_t s = static_cast<std::size_t>(samples);
  for (std::size_t r = 0; r < depths.size() / s; ++r) {
    const double* t = depths.data() + r * s;
    for (std::size_t i = 0; i < s; ++i) {
      const double next = i + 1 < s ? t[i + 1] : z_far;
      if (!(next > t[i])) throw std::invalid_argument("render: depths of ray " + std::to_string(r) + " are not sorted");
      deltas[r * s + i] = next - t[i];
    }
  }
  return deltas;
}

template <typename Real>
Composited<Real> composite(const Tensor<Real>& sigma, const Tensor<Real>& rgb, std::span<const double> deltas,
                           std::span<const double> background) {
  if (sigma.rank() != 2 || rgb.rank() != 3 || rgb.dim(0) != sigma.dim(0) || rgb.dim(1) != sigma.dim(1) ||
      rgb.dim(2) != 3)
    dm::throw_shape_error("composite", sigma.shape(), rgb.shape());
  const std::int64_t rays = sigma.dim(0), samples = sigma.dim(1);
  if (static_cast<std::int64_t>(deltas.size()) != rays * samples ||
      static_cast<std::int64_t>(background.size()) != rays * 3)
    throw dm::ShapeError("composite: deltas/background do not match " + dm::to_string(sigma.shape()));
  auto d = std::make_shared<std::vector<Real>>(deltas.begin(), deltas.end());
  auto bg = std::make_shared<std::vector<Real>>(background.begin(), background.end());
  std::vector<Real> out(static_cast<std::size_t>(rays * 3));
  Composited<Real> result;
  result.weights.resize(static_cast<std::size_t>(rays * samples));
  kernels::parallel::composite_forward(sigma.data().data(), rgb.data().data(), d->data(), bg->data(), rays, samples,
                                       out.data(), result.weights.data());
  result.rgb = dm::record_op<Real>({rays, 3}, std::move(out), {sigma, rgb},
                                   [sigma, rgb, d, bg, rays, samples](const dm::Node<Real>& node) {
                                     kernels::parallel::composite_backward(
                                         sigma.data().data(), rgb.data().data(), d->data(), bg->data(), rays,
                                         samples, node.grad.data(), dm::grad_sink(sigma), dm::grad_sink(rgb));
                                   });
  return result;
}

template <typename Real>
Tensor<Real> render_ray(std::span<const double> depths, double z_far, const Tensor<Real>& sigma,
                        const Tensor<Real>& rgb, const double (&background)[3]) {
  const auto s = static_cast<std::int64_t>(depths.size());
  const auto deltas = interval_lengths(depths, s, z_far);
  return dm::reshape(composite(dm::reshape(sigma, {1, s}), dm::reshape(rgb, {1, s, 3}), deltas,
                               std::span<const double>(background, 3))
                         .rgb,
                     {3});
}

template <typename Real>
Tensor<Real> mse_loss(const Tensor<Real>& rendered, const Tensor<Real>& truth) {
  if (rendered.shape() != truth.shape()) dm::throw_shape_error("mse_loss", rendered.shape(), truth.shape());
  auto diff = dm::sub(rendered, truth);
  return dm::mean(dm::mul(diff, diff));
}

LossReport total_loss(double l_mse, double l_reg, double lambda) {
  if (!(lambda >= 0)) throw std::invalid_argument("total_loss: lambda must be non-negative");
  return {l_mse, l_reg, l_mse + lambda * l_reg, lambda};
}

template <typename Real>
Tensor<Real> total_loss(const Tensor<Real>& l_mse, const Tensor<Real>& l_reg, double lambda) {
  if (!(lambda >= 0)) throw std::invalid_argument("total_loss: lambda must be non-negative");
  return dm::add(l_mse, dm::scale(l_reg, static_cast<Real>(lambda)));
}

#define DFRF_INSTANTIATE_RENDER(Real)                                                                        \
  template Composited<Real> composite(const Tensor<Real>&, const Tensor<Real>&, std::span<const double>,    \
                                      std::span<const double>);                                             \
  template Tensor<Real> render_ray(std::span<const double>, double, const Tensor<Real>&, const Tensor<Real>&, \
                                   const double (&)[3]);                                                    \
  template Tensor<Real> mse_loss(const Tensor<Real>&, const Tensor<Real>&);                                  \
  template Tensor<Real> total_loss(const Tensor<Real>&, const Tensor<Real>&, double);

DFRF_INSTANTIATE_RENDER(float)
DFRF_INSTANTIATE_RENDER(double)

}  // namespace dfrf::renderer
