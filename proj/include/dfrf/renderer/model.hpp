#pragma once

#include <cstdint>
#include <string>

#include "dfrf/conditioning/conditioning.hpp"
#include "dfrf/radiance/field.hpp"
#include "dfrf/warpfield/warpfield.hpp"

namespace dfrf::renderer {

struct ModelConfig {
  radiance::FieldConfig field = radiance::FieldConfig::desk();
  std::int64_t condition_dim = 32;
  std::int64_t feature_dim = 128;
  std::int64_t warp_hidden = 128;
  std::int64_t attention_hidden = 32;
  std::int64_t filter_hidden = 32;
  int filter_window = 9;
};

/// Every learnable piece of the system: theta (field), eta (warp), the
/// feature extractor, the reference aggregator and the temporal filter.
template <typename Real>
struct Model {
  ModelConfig config;
  conditioning::TemporalFilter<Real> filter;
  conditioning::FeatureExtractor<Real> extractor;
  conditioning::Aggregator<Real> aggregator;
  warpfield::WarpField<Real> warp;
  radiance::RadianceField<Real> field;

  Model(const ModelConfig& config, std::uint64_t seed);

  /// All parameters with stable, unique names, in a fixed order.
  diffmath::ParamList<Real> parameters() const;
  /// The warp module's parameters only (eta).
  diffmath::ParamList<Real> warp_parameters() const;

  /// Deep copy: fresh parameter tensors holding the same values.
  Model clone() const;

  /// Copies values into the parameters of the same names. Every parameter
  /// must be present with a matching shape; throws std::invalid_argument
  /// otherwise. Extra entries in `values` are ignored.
  void assign(const diffmath::ParamList<Real>& values);

  /// Turns the field fully transparent: the density head's weights become
  /// zero and its bias so negative that softplus underflows to exactly 0.
  void zero_density();
};

}  // namespace dfrf::renderer
