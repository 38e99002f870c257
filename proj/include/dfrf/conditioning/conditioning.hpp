#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dfrf/diffmath/layers.hpp"

// Condition signals and pixel-aligned reference features.

namespace dfrf::conditioning {

using diffmath::ParamList;
using diffmath::Tensor;

/// Raw per-frame condition vectors (the driving signal A before filtering).
struct ConditionTrack {
  std::int64_t dim = 0;
  std::vector<std::vector<double>> frames;

  std::int64_t size() const { return static_cast<std::int64_t>(frames.size()); }

  /// Rows t-w/2 .. t+w/2 as [window, dim]; indices past either end repeat
  /// the edge frame.
  template <typename Real>
  Tensor<Real> window(std::int64_t t, int window) const;
};

/// Additive self-attention over a temporal window:
/// A_t = sum_k softmax(w . tanh(W a_{t+k} + b))_k a_{t+k}.
template <typename Real>
class TemporalFilter {
 public:
  TemporalFilter() = default;
  TemporalFilter(std::int64_t dim, std::int64_t hidden, std::mt19937_64& rng);

  /// windows: [B, K, dim] -> [B, dim]
  Tensor<Real> operator()(const Tensor<Real>& windows) const;
  /// Filtered condition vector of frame t, [dim].
  Tensor<Real> filter(const ConditionTrack& track, std::int64_t t, int window) const;

  void collect(const std::string& prefix, ParamList<Real>& out) const;

 private:
  diffmath::Linear<Real> score_;
  Tensor<Real> query_;  // [hidden, 1]
};

/// Two 3x3 convolutions, 3 -> 64 -> depth channels, relu between them, no
/// down-sampling.
template <typename Real>
class FeatureExtractor {
 public:
  static constexpr std::int64_t kHidden = 64;

  FeatureExtractor() = default;
  FeatureExtractor(std::int64_t depth, std::mt19937_64& rng);

  /// images: [N, H, W, 3] in [0, 1] -> [N, H, W, depth]
  Tensor<Real> operator()(const Tensor<Real>& images) const;
  std::int64_t depth() const { return w2_.dim(3); }

  void collect(const std::string& prefix, ParamList<Real>& out) const;

 private:
  Tensor<Real> w1_, b1_, w2_, b2_;
};

/// Additive attention across references: s_n = w . tanh(W f_n + b), output
/// sum_n softmax(s)_n f_n. Masked references get zero weight.
template <typename Real>
class Aggregator {
 public:
  Aggregator() = default;
  Aggregator(std::int64_t depth, std::int64_t hidden, std::mt19937_64& rng);

  /// features: [P, N, D]; valid (optional, P*N flags) marks usable
  /// (point, reference) pairs. Returns [P, D].
  Tensor<Real> operator()(const Tensor<Real>& features, std::span<const std::uint8_t> valid = {}) const;

  void collect(const std::string& prefix, ParamList<Real>& out) const;

 private:
  diffmath::Linear<Real> score_;
  Tensor<Real> query_;
};

/// Feature lookup at continuous grid coordinates. Grid node (i, j) is the
/// map entry at column i, row j; coordinates are clamped to
/// [0, W-1] x [0, H-1] first. maps: [M, H, W, D]; map_of_row[r] selects the
/// map for row r (negative: zero feature). Returns [R, D].
template <typename Real>
Tensor<Real> sample_nearest(const Tensor<Real>& maps, std::span<const double> coords,
                            std::span<const std::int64_t> map_of_row);

/// Bilinear soft index over the four enclosing grid nodes; differentiable in
/// both the maps and the coordinates [R, 2].
template <typename Real>
Tensor<Real> sample_bilinear(const Tensor<Real>& maps, const Tensor<Real>& coords,
                             std::span<const std::int64_t> map_of_row);

}  // namespace dfrf::conditioning
