#include "dfrf/renderer/model.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>

namespace dfrf::renderer {

template <typename Real>
Model<Real>::Model(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  // One generator, fixed construction order: initialisation depends only on
  // the seed and the configuration.
  std::mt19937_64 rng(seed);
  filter = conditioning::TemporalFilter<Real>(cfg.condition_dim, cfg.filter_hidden, rng);
  extractor = conditioning::FeatureExtractor<Real>(cfg.feature_dim, rng);
  aggregator = conditioning::Aggregator<Real>(cfg.feature_dim, cfg.attention_hidden, rng);
  warp = warpfield::WarpField<Real>(radiance::encoded_dim(radiance::kPositionLevels) + cfg.condition_dim,
                                    cfg.feature_dim, cfg.warp_hidden, rng);
  field = radiance::RadianceField<Real>(cfg.field, cfg.condition_dim, cfg.feature_dim, rng);
}

template <typename Real>
diffmath::ParamList<Real> Model<Real>::parameters() const {
  diffmath::ParamList<Real> out;
  filter.collect("filter", out);
  extractor.collect("extractor", out);
  aggregator.collect("aggregator", out);
  warp.collect("warp", out);
  field.collect("field", out);
  return out;
}

template <typename Real>
diffmath::ParamList<Real> Model<Real>::warp_parameters() const {
  diffmath::ParamList<Real> out;
  warp.collect("warp", out);
  return out;
}

template <typename Real>
Model<Real> Model<Real>::clone() const {
  Model copy(config, 0);
  copy.assign(parameters());
  return copy;
}

template <typename Real>
void Model<Real>::assign(const diffmath::ParamList<Real>& values) {
  std::unordered_map<std::string, const diffmath::Tensor<Real>*> by_name;
  for (const auto& v : values) by_name.emplace(v.name, &v.tensor);
  for (auto& p : parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::invalid_argument("model: missing parameter " + p.name);
    if (it->second->shape() != p.tensor.shape())
      throw std::invalid_argument("model: parameter " + p.name + " has shape " + diffmath::to_string(it->second->shape()) +
                                  ", expected " + diffmath::to_string(p.tensor.shape()));
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), p.tensor.data_mut().begin());
  }
}

template <typename Real>
void Model<Real>::zero_density() {
  auto& head = field.density_head();
  for (auto& w : head.weight.data_mut()) w = Real(0);
  for (auto& b : head.bias.data_mut()) b = Real(-1e4);
}

template struct Model<float>;
template struct Model<double>;

}  // namespace dfrf::renderer
