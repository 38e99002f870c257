#include "dfrf/warpfield/warpfield.hpp"

#include <string>

namespace dfrf::warpfield {

namespace dm = diffmath;

template <typename Real>
WarpField<Real>::WarpField(std::int64_t code_dim, std::int64_t feature_dim, std::int64_t hidden, std::mt19937_64& rng)
    : hidden_(hidden, hidden, rng), out_(dm::Linear<Real>::zero(hidden, 2)) {
  // One Glorot draw for the whole first layer, then split by rows, so the
  // initialisation matches an unsplit [code_dim + D, hidden] layer.
  auto first = dm::glorot<Real>({code_dim + feature_dim, hidden}, code_dim + feature_dim, hidden, rng);
  auto rows = first.data();
  const auto split = static_cast<std::size_t>(code_dim * hidden);
  code_in_.weight = Tensor<Real>({code_dim, hidden}, std::vector<Real>(rows.begin(), rows.begin() + split), true);
  code_in_.bias = Tensor<Real>::zeros({hidden}, true);
  feature_in_ = Tensor<Real>({feature_dim, hidden}, std::vector<Real>(rows.begin() + split, rows.end()), true);
}

template <typename Real>
Tensor<Real> WarpField<Real>::operator()(const Tensor<Real>& point_code, const Tensor<Real>& features) const {
  if (features.rank() != 3 || point_code.rank() != 2 || features.dim(1) != point_code.dim(0))
    dm::throw_shape_error("warp_field", point_code.shape(), features.shape());
  const std::int64_t n = features.dim(0), p = features.dim(1), d = features.dim(2);
  const std::int64_t h = feature_in_.dim(1);
  auto per_point = code_in_(point_code);                                              // [P, H]
  auto per_pair = dm::reshape(dm::matmul(dm::reshape(features, {n * p, d}), feature_in_), {n, p, h});
  auto h1 = dm::relu(dm::add(per_pair, per_point));                                   // [N, P, H]
  auto h2 = dm::relu(hidden_(dm::reshape(h1, {n * p, h})));
  return dm::reshape(out_(h2), {n, p, 2});
}

template <typename Real>
void WarpField<Real>::collect(const std::string& prefix, ParamList<Real>& out) const {
  out.push_back({prefix + ".layer1.code_weight", code_in_.weight});
  out.push_back({prefix + ".layer1.feature_weight", feature_in_});
  out.push_back({prefix + ".layer1.bias", code_in_.bias});
  hidden_.collect(prefix + ".layer2", out);
  out_.collect(prefix + ".layer3", out);
}

template <typename Real>
Tensor<Real> offset_regularizer(const Tensor<Real>& offsets, std::span<const double> alphas) {
  if (offsets.rank() != 3 || offsets.dim(2) != 2 || offsets.dim(1) != static_cast<std::int64_t>(alphas.size()))
    dm::throw_shape_error("offset_regularizer", offsets.shape(), {static_cast<std::int64_t>(alphas.size())});
  std::vector<Real> weight(alphas.size());
  for (std::size_t i = 0; i < alphas.size(); ++i) weight[i] = static_cast<Real>(1.0 - alphas[i]);
  auto norm = dm::sqrt(dm::add(dm::sum(dm::mul(offsets, offsets), 2), Tensor<Real>::scalar(Real(kRegularizerEps))));
  return dm::mean(dm::mul(norm, Tensor<Real>({offsets.dim(1)}, std::move(weight))));
}

template class WarpField<float>;
template class WarpField<double>;
template Tensor<float> offset_regularizer(const Tensor<float>&, std::span<const double>);
template Tensor<double> offset_regularizer(const Tensor<double>&, std::span<const double>);

}  // namespace dfrf::warpfield
