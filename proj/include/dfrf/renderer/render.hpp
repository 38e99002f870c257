#pragma once

#include <span>
#include <vector>

#include "dfrf/diffmath/ops.hpp"

// Volume rendering with the background rule: every ray's terminal sample
// takes the stored background pixel as its colour and is fully opaque, so
// the compositing weights always sum to one.

namespace dfrf::renderer {

using diffmath::Tensor;

/// delta_i = t_{i+1} - t_i, last delta = z_far - t_n. depths: [B, S] row-major.
/// Throws std::invalid_argument unless every row is strictly increasing
/// and below z_far.
std::vector<double> interval_lengths(std::span<const double> depths, std::int64_t samples, double z_far);

template <typename Real>
struct Composited {
  Tensor<Real> rgb;            // [B, 3]
  std::vector<Real> weights;   // [B, S], T_i alpha_i
};

/// sigma: [B, S]; rgb: [B, S, 3]; deltas: [B, S]; background: [B, 3].
/// The last sample's sigma and colour are ignored (replaced by the rule).
template <typename Real>
Composited<Real> composite(const Tensor<Real>& sigma, const Tensor<Real>& rgb, std::span<const double> deltas,
                           std::span<const double> background);

/// Single-ray convenience wrapper over composite. sigma: [S], rgb: [S, 3].
template <typename Real>
Tensor<Real> render_ray(std::span<const double> depths, double z_far, const Tensor<Real>& sigma,
                        const Tensor<Real>& rgb, const double (&background)[3]);

/// Mean over rays and channels of (C - I)^2.
template <typename Real>
Tensor<Real> mse_loss(const Tensor<Real>& rendered, const Tensor<Real>& truth);

inline constexpr double kDefaultLambda = 5e-8;

struct LossReport {
  double l_mse = 0, l_reg = 0, total = 0, lambda = kDefaultLambda;
};

/// total = l_mse + lambda * l_reg.
LossReport total_loss(double l_mse, double l_reg, double lambda = kDefaultLambda);

/// Differentiable counterpart of total_loss for the training graph.
template <typename Real>
Tensor<Real> total_loss(const Tensor<Real>& l_mse, const Tensor<Real>& l_reg, double lambda);

}  // namespace dfrf::renderer
