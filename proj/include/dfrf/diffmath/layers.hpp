#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "dfrf/diffmath/ops.hpp"

namespace dfrf::diffmath {

template <typename Real>
struct NamedTensor {
  std::string name;
  Tensor<Real> tensor;
};

template <typename Real>
using ParamList = std::vector<NamedTensor<Real>>;

/// Glorot-uniform tensor drawn from `rng`, marked as a trainable leaf.
template <typename Real>
Tensor<Real> glorot(Shape shape, std::int64_t fan_in, std::int64_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<Real> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<Real>(u(rng));
  return Tensor<Real>(std::move(shape), std::move(v), true);
}

/// y = x W + b with W: [in, out].
template <typename Real>
struct Linear {
  Tensor<Real> weight, bias;

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, std::mt19937_64& rng)
      : weight(glorot<Real>({in, out}, in, out, rng)), bias(Tensor<Real>::zeros({out}, true)) {}

  static Linear zero(std::int64_t in, std::int64_t out) {
    Linear l;
    l.weight = Tensor<Real>::zeros({in, out}, true);
    l.bias = Tensor<Real>::zeros({out}, true);
    return l;
  }

  Tensor<Real> operator()(const Tensor<Real>& x) const { return add(matmul(x, weight), bias); }
  std::int64_t in() const { return weight.dim(0); }
  std::int64_t out() const { return weight.dim(1); }

  void collect(const std::string& prefix, ParamList<Real>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

}  // namespace dfrf::diffmath
