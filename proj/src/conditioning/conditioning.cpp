#include "dfrf/conditioning/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dfrf/diffmath/kernels.hpp"

namespace dfrf::conditioning {

namespace dm = diffmath;

template <typename Real>
Tensor<Real> ConditionTrack::window(std::int64_t t, int window) const {
  if (frames.empty()) throw std::invalid_argument("condition track is empty");
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("temporal window must be odd and positive");
  const std::int64_t half = window / 2;
  std::vector<Real> rows;
  rows.reserve(static_cast<std::size_t>(window * dim));
  for (std::int64_t k = t - half; k <= t + half; ++k) {
    const auto& f = frames[static_cast<std::size_t>(std::clamp<std::int64_t>(k, 0, size() - 1))];
    for (double x : f) rows.push_back(static_cast<Real>(x));
  }
  return Tensor<Real>({window, dim}, std::move(rows));
}

template <typename Real>
TemporalFilter<Real>::TemporalFilter(std::int64_t dim, std::int64_t hidden, std::mt19937_64& rng)
    : score_(dim, hidden, rng), query_(dm::glorot<Real>({hidden, 1}, hidden, 1, rng)) {}

// Shared by the filter and the aggregator: scores [P*N, D] rows with
// w . tanh(W x + b) and returns them as [P, N].
template <typename Real>
static Tensor<Real> additive_scores(const dm::Linear<Real>& score, const Tensor<Real>& query, const Tensor<Real>& x) {
  const std::int64_t p = x.dim(0), n = x.dim(1), d = x.dim(2);
  auto flat = dm::reshape(x, {p * n, d});
  return dm::reshape(dm::matmul(dm::tanh(score(flat)), query), {p, n});
}

template <typename Real>
Tensor<Real> TemporalFilter<Real>::operator()(const Tensor<Real>& windows) const {
  if (windows.rank() != 3 || windows.dim(2) != score_.in())
    dm::throw_shape_error("temporal_filter", windows.shape(), score_.weight.shape());
  auto weights = dm::softmax(additive_scores(score_, query_, windows), 1);
  return dm::weighted_sum(weights, windows);
}

template <typename Real>
Tensor<Real> TemporalFilter<Real>::filter(const ConditionTrack& track, std::int64_t t, int window) const {
  auto w = track.window<Real>(t, window);
  return dm::reshape((*this)(dm::reshape(w, {1, w.dim(0), w.dim(1)})), {track.dim});
}

template <typename Real>
void TemporalFilter<Real>::collect(const std::string& prefix, ParamList<Real>& out) const {
  score_.collect(prefix + ".score", out);
  out.push_back({prefix + ".query", query_});
}

template <typename Real>
FeatureExtractor<Real>::FeatureExtractor(std::int64_t depth, std::mt19937_64& rng)
    : w1_(dm::glorot<Real>({3, 3, 3, kHidden}, 9 * 3, 9 * kHidden, rng)),
      b1_(Tensor<Real>::zeros({kHidden}, true)),
      w2_(dm::glorot<Real>({3, 3, kHidden, depth}, 9 * kHidden, 9 * depth, rng)),
      b2_(Tensor<Real>::zeros({depth}, true)) {}

template <typename Real>
Tensor<Real> FeatureExtractor<Real>::operator()(const Tensor<Real>& images) const {
  return dm::conv2d(dm::relu(dm::conv2d(images, w1_, b1_)), w2_, b2_);
}

template <typename Real>
void FeatureExtractor<Real>::collect(const std::string& prefix, ParamList<Real>& out) const {
  out.push_back({prefix + ".conv1.weight", w1_});
  out.push_back({prefix + ".conv1.bias", b1_});
  out.push_back({prefix + ".conv2.weight", w2_});
  out.push_back({prefix + ".conv2.bias", b2_});
}

template <typename Real>
Aggregator<Real>::Aggregator(std::int64_t depth, std::int64_t hidden, std::mt19937_64& rng)
    : score_(depth, hidden, rng), query_(dm::glorot<Real>({hidden, 1}, hidden, 1, rng)) {}

template <typename Real>
Tensor<Real> Aggregator<Real>::operator()(const Tensor<Real>& features, std::span<const std::uint8_t> valid) const {
  if (features.rank() != 3 || features.dim(2) != score_.in())
    dm::throw_shape_error("aggregate", features.shape(), score_.weight.shape());
  const std::int64_t p = features.dim(0), n = features.dim(1);
  auto scores = additive_scores(score_, query_, features);
  if (!valid.empty()) {
    if (static_cast<std::int64_t>(valid.size()) != p * n)
      throw dm::ShapeError("aggregate: mask of " + std::to_string(valid.size()) + " flags for " +
                           dm::to_string(features.shape()));
    std::vector<Real> mask(valid.size());
    for (std::size_t i = 0; i < valid.size(); ++i) mask[i] = valid[i] ? Real(0) : Real(-1e30);
    scores = dm::add(scores, Tensor<Real>({p, n}, std::move(mask)));
  }
  return dm::weighted_sum(dm::softmax(scores, 1), features);
}

template <typename Real>
void Aggregator<Real>::collect(const std::string& prefix, ParamList<Real>& out) const {
  score_.collect(prefix + ".score", out);
  out.push_back({prefix + ".query", query_});
}

template <typename Real>
Tensor<Real> sample_nearest(const Tensor<Real>& maps, std::span<const double> coords,
                            std::span<const std::int64_t> map_of_row) {
  if (maps.rank() != 4) dm::throw_shape_error("sample_nearest", maps.shape(), {-1, -1, -1, -1});
  const std::int64_t h = maps.dim(1), w = maps.dim(2);
  const std::size_t rows = map_of_row.size();
  if (coords.size() != 2 * rows) throw dm::ShapeError("sample_nearest: coordinate count does not match rows");
  std::vector<std::int64_t> index(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (map_of_row[r] < 0) {
      index[r] = -1;
      continue;
    }
    // NaN clamps to 0 like the bilinear path.
    auto snap = [](double x, std::int64_t extent) {
      const double c = std::isnan(x) ? 0.0 : std::clamp(x, 0.0, static_cast<double>(extent - 1));
      return static_cast<std::int64_t>(std::round(c));
    };
    index[r] = (map_of_row[r] * h + snap(coords[2 * r + 1], h)) * w + snap(coords[2 * r], w);
  }
  return dm::gather_rows<Real>(maps, index);
}

template <typename Real>
Tensor<Real> sample_bilinear(const Tensor<Real>& maps, const Tensor<Real>& coords,
                             std::span<const std::int64_t> map_of_row) {
  if (maps.rank() != 4) dm::throw_shape_error("sample_bilinear", maps.shape(), coords.shape());
  const auto rows = static_cast<std::int64_t>(map_of_row.size());
  if (coords.rank() != 2 || coords.dim(0) != rows || coords.dim(1) != 2)
    dm::throw_shape_error("sample_bilinear", maps.shape(), coords.shape());
  for (auto m : map_of_row)
    if (m >= maps.dim(0)) throw std::out_of_range("sample_bilinear: map index out of range");
  const std::int64_t h = maps.dim(1), w = maps.dim(2), d = maps.dim(3);
  std::vector<Real> out(static_cast<std::size_t>(rows * d));
  std::vector<std::int64_t> which(map_of_row.begin(), map_of_row.end());
  kernels::parallel::bilinear_forward(maps.data().data(), h, w, d, coords.data().data(), which, out.data());
  return dm::record_op<Real>({rows, d}, std::move(out), {maps, coords},
                             [maps, coords, which = std::move(which), h, w, d](const dm::Node<Real>& o) {
                               kernels::parallel::bilinear_backward(maps.data().data(), h, w, d, coords.data().data(),
                                                                    which, o.grad.data(), dm::grad_sink(maps),
                                                                    dm::grad_sink(coords));
                             });
}

template Tensor<float> ConditionTrack::window<float>(std::int64_t, int) const;
template Tensor<double> ConditionTrack::window<double>(std::int64_t, int) const;
template class TemporalFilter<float>;
template class TemporalFilter<double>;
template class FeatureExtractor<float>;
template class FeatureExtractor<double>;
template class Aggregator<float>;
template class Aggregator<double>;
template Tensor<float> sample_nearest(const Tensor<float>&, std::span<const double>, std::span<const std::int64_t>);
template Tensor<double> sample_nearest(const Tensor<double>&, std::span<const double>, std::span<const std::int64_t>);
template Tensor<float> sample_bilinear(const Tensor<float>&, const Tensor<float>&, std::span<const std::int64_t>);
template Tensor<double> sample_bilinear(const Tensor<double>&, const Tensor<double>&, std::span<const std::int64_t>);

}  // namespace dfrf::conditioning
