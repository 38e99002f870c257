#include "dfrf/radiance/field.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dfrf::radiance {

namespace dm = diffmath;

template <typename Real>
Tensor<Real> positional_encode(std::span<const double> xyz, int levels) {
  if (xyz.size() % 3 != 0 || xyz.empty()) throw dm::ShapeError("positional_encode: expected [P, 3] coordinates");
  const auto n = static_cast<std::int64_t>(xyz.size() / 3);
  const std::int64_t dim = encoded_dim(levels);
  std::vector<Real> out(static_cast<std::size_t>(n * dim));
  for (std::int64_t i = 0; i < n; ++i) {
    Real* row = out.data() + i * dim;
    const double* x = xyz.data() + 3 * i;
    for (int c = 0; c < 3; ++c) row[c] = static_cast<Real>(x[c]);
    for (int l = 0; l < levels; ++l) {
      const double freq = std::ldexp(std::numbers::pi, l);
      for (int c = 0; c < 3; ++c) {
        row[3 + 6 * l + c] = static_cast<Real>(std::sin(freq * x[c]));
        row[6 + 6 * l + c] = static_cast<Real>(std::cos(freq * x[c]));
      }
    }
  }
  return Tensor<Real>({n, dim}, std::move(out));
}

template <typename Real>
RadianceField<Real>::RadianceField(const FieldConfig& config, std::int64_t cond_dim, std::int64_t feature_dim,
                                   std::mt19937_64& rng)
    : config_(config) {
  if (config.layers < 1 || config.width < 1 || config.skip < 0 || config.skip > config.layers)
    throw std::invalid_argument("radiance field: invalid architecture");
  const std::int64_t input = encoded_dim(kPositionLevels) + cond_dim + feature_dim;
  for (int layer = 1; layer <= config.layers; ++layer) {
    std::int64_t in = layer == 1 ? input : config.width;
    if (layer == config.skip && layer > 1) in += input;
    trunk_.emplace_back(in, config.width, rng);
  }
  density_ = dm::Linear<Real>(config.width, 1, rng);
  color_hidden_ = dm::Linear<Real>(config.width + encoded_dim(kDirectionLevels), config.width / 2, rng);
  color_out_ = dm::Linear<Real>(config.width / 2, 3, rng);
}

template <typename Real>
FieldOutput<Real> RadianceField<Real>::operator()(std::span<const double> points, std::span<const double> dirs,
                                                  const Tensor<Real>& cond, const Tensor<Real>& features) const {
  return evaluate(positional_encode<Real>(points, kPositionLevels), dirs, cond, features);
}

template <typename Real>
FieldOutput<Real> RadianceField<Real>::evaluate(const Tensor<Real>& encoded_points, std::span<const double> dirs,
                                                const Tensor<Real>& cond, const Tensor<Real>& features) const {
  const std::int64_t n = encoded_points.dim(0);
  if (static_cast<std::int64_t>(dirs.size()) != 3 * n) throw dm::ShapeError("radiance field: direction count");
  for (std::int64_t i = 0; i < n; ++i) {
    const double norm = std::sqrt(dirs[3 * i] * dirs[3 * i] + dirs[3 * i + 1] * dirs[3 * i + 1] +
                                  dirs[3 * i + 2] * dirs[3 * i + 2]);
    if (!(std::abs(norm - 1.0) <= 1e-6))
      throw std::invalid_argument("radiance field: view direction " + std::to_string(i) + " is not unit length");
  }
  const auto per_point = cond.rank() == 1 ? dm::broadcast(cond, {n}) : cond;
  const auto x = dm::concat<Real>({encoded_points, per_point, features}, 1);
  Tensor<Real> h = x;
  for (int layer = 1; layer <= config_.layers; ++layer) {
    if (layer == config_.skip && layer > 1) h = dm::concat<Real>({h, x}, 1);
    h = dm::relu(trunk_[layer - 1](h));
  }
  FieldOutput<Real> out;
  out.sigma = dm::reshape(dm::softplus(density_(h)), {n});
  const auto view = positional_encode<Real>(dirs, kDirectionLevels);
  out.rgb = dm::sigmoid(color_out_(dm::relu(color_hidden_(dm::concat<Real>({h, view}, 1)))));
  return out;
}

template <typename Real>
void RadianceField<Real>::collect(const std::string& prefix, ParamList<Real>& out) const {
  for (std::size_t i = 0; i < trunk_.size(); ++i) trunk_[i].collect(prefix + ".trunk" + std::to_string(i + 1), out);
  density_.collect(prefix + ".density", out);
  color_hidden_.collect(prefix + ".color1", out);
  color_out_.collect(prefix + ".color2", out);
}

template Tensor<float> positional_encode(std::span<const double>, int);
template Tensor<double> positional_encode(std::span<const double>, int);
template class RadianceField<float>;
template class RadianceField<double>;

}  // namespace dfrf::radiance
