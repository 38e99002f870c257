#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dfrf/diffmath/tensor.hpp"

// Differentiable primitives. Each op computes its result eagerly and, when a
// tape is active and an input requires a gradient, records its exact
// vector-Jacobian product.
//
// Binary elementwise ops accept equal shapes or leading-axis expansion: the
// smaller operand's shape must be a suffix of the larger one's ([D] against
// [N, D], a scalar against anything). No other broadcasting happens
// implicitly.

namespace dfrf::diffmath {

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);

/// a * c for a constant c.
template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c);

/// [M, K] x [K, N] -> [M, N]
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);

/// 3x3, stride 1, zero padded. x: [N, H, W, Cin], weight: [3, 3, Cin, Cout],
/// bias: [Cout]. Returns [N, H, W, Cout].
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias);

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> softplus(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> exp(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> log(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> sin(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> cos(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> sqrt(const Tensor<Real>& a);

/// Sum of all elements (scalar result).
template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a);
/// Sum along one axis; the axis is removed from the shape.
template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a, std::size_t axis);
template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a);

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& a, std::size_t axis);

template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis);

/// Elements [begin, end) along `axis`.
template <typename Real>
Tensor<Real> slice(const Tensor<Real>& a, std::size_t axis, std::int64_t begin, std::int64_t end);

/// Prepends `leading` axes: result shape is leading ++ a.shape.
template <typename Real>
Tensor<Real> broadcast(const Tensor<Real>& a, const Shape& leading);

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape);

/// Exchanges the first two axes: [A, B, ...] -> [B, A, ...].
template <typename Real>
Tensor<Real> swap_leading(const Tensor<Real>& a);

/// Views `table` as [rows, last-dim] and picks rows; index < 0 yields a zero
/// row. Result: [index.size(), last-dim].
template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& table, std::span<const std::int64_t> index);

/// out[p, :] = sum_n weights[p, n] * values[p, n, :]
template <typename Real>
Tensor<Real> weighted_sum(const Tensor<Real>& weights, const Tensor<Real>& values);

}  // namespace dfrf::diffmath
