#pragma once

#include <random>
#include <span>

#include "dfrf/diffmath/layers.hpp"
#include "dfrf/geometry/camera.hpp"

// The face-warping module: a three-layer MLP predicting a 2D image-space
// offset for every (point, reference) pair from the encoded point, the
// condition vector and the reference feature at the unwarped projection.

namespace dfrf::warpfield {

using diffmath::ParamList;
using diffmath::Tensor;

template <typename Real>
class WarpField {
 public:
  WarpField() = default;
  /// code_dim: width of [gamma(p), A]; feature_dim: D.
  WarpField(std::int64_t code_dim, std::int64_t feature_dim, std::int64_t hidden, std::mt19937_64& rng);

  /// point_code: [P, code_dim] holding [gamma(p), A] per point; features:
  /// [N, P, D] in reference-major order. Returns offsets [N, P, 2] (du, dv).
  ///
  /// The first layer acts on the concatenation [gamma(p), A, f_n]; its
  /// weight is stored split by input block so the per-point part is computed
  /// once and shared by all N references.
  Tensor<Real> operator()(const Tensor<Real>& point_code, const Tensor<Real>& features) const;

  void collect(const std::string& prefix, ParamList<Real>& out) const;

 private:
  diffmath::Linear<Real> code_in_;  // [code_dim, hidden] plus the layer's bias
  Tensor<Real> feature_in_;         // [D, hidden]
  diffmath::Linear<Real> hidden_, out_;
};

/// (u', v') = (u + du, v + dv); coords and offsets share any shape [..., 2].
template <typename Real>
Tensor<Real> warp(const Tensor<Real>& coords, const Tensor<Real>& offsets) {
  if (coords.shape() != offsets.shape()) diffmath::throw_shape_error("warp", coords.shape(), offsets.shape());
  return diffmath::add(coords, offsets);
}

inline geometry::ImageCoord warp(geometry::ImageCoord at, double du, double dv) { return {at.u + du, at.v + dv}; }

inline constexpr double kRegularizerEps = 1e-12;

/// Density-weighted offset magnitude:
/// (1 / (N |P|)) sum_p sum_n (1 - alpha_p) sqrt(du^2 + dv^2 + eps).
/// offsets: [N, P, 2]; alphas: P opacities in [0, 1], used as constants.
template <typename Real>
Tensor<Real> offset_regularizer(const Tensor<Real>& offsets, std::span<const double> alphas);

}  // namespace dfrf::warpfield
