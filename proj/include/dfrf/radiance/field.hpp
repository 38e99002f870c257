#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "dfrf/diffmath/layers.hpp"

namespace dfrf::radiance {

using diffmath::ParamList;
using diffmath::Tensor;

inline constexpr int kPositionLevels = 10;
inline constexpr int kDirectionLevels = 4;

constexpr std::int64_t encoded_dim(int levels) { return 3 + 2 * 3 * levels; }

/// [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]
/// for each row of xyz ([P, 3], row-major). Returns [P, 3 + 6L].
template <typename Real>
Tensor<Real> positional_encode(std::span<const double> xyz, int levels);

struct FieldConfig {
  int layers = 4;
  std::int64_t width = 128;
  int skip = 3;  // 1-based trunk layer whose input is [h, x]; 0 disables

  static FieldConfig desk() { return {4, 128, 3}; }
  static FieldConfig paper() { return {8, 256, 5}; }
};

template <typename Real>
struct FieldOutput {
  Tensor<Real> sigma;  // [P], >= 0
  Tensor<Real> rgb;    // [P, 3], in [0, 1]
};

/// Conditioned radiance field: trunk MLP over [gamma(p), A, F], softplus
/// density head, and a colour head that also sees gamma(d).
template <typename Real>
class RadianceField {
 public:
  RadianceField() = default;
  RadianceField(const FieldConfig& config, std::int64_t cond_dim, std::int64_t feature_dim, std::mt19937_64& rng);

  /// points, dirs: [P, 3] row-major world coordinates and unit directions.
  /// cond: [cond_dim] shared by all points or [P, cond_dim]; features: [P, D].
  FieldOutput<Real> operator()(std::span<const double> points, std::span<const double> dirs,
                               const Tensor<Real>& cond, const Tensor<Real>& features) const;

  /// Same, with gamma(p) already computed (the pipeline shares it with the
  /// warp field).
  FieldOutput<Real> evaluate(const Tensor<Real>& encoded_points, std::span<const double> dirs,
                             const Tensor<Real>& cond, const Tensor<Real>& features) const;

  const FieldConfig& config() const { return config_; }
  void collect(const std::string& prefix, ParamList<Real>& out) const;

  /// Density layer access for building analytic test models.
  diffmath::Linear<Real>& density_head() { return density_; }

 private:
  FieldConfig config_;
  std::vector<diffmath::Linear<Real>> trunk_;
  diffmath::Linear<Real> density_, color_hidden_, color_out_;
};

}  // namespace dfrf::radiance
