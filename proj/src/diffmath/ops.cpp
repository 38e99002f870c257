#include "dfrf/diffmath/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "dfrf/diffmath/kernels.hpp"

namespace dfrf::diffmath {

std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void throw_shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

namespace {
std::atomic<NodeId> g_next_id{1};
std::atomic<Profile> g_profile{Profile::F32};

constexpr std::int64_t kParallelThreshold = 1 << 14;
}  // namespace

NodeId next_node_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

Profile active_profile() { return g_profile.load(); }
void set_active_profile(Profile profile) { g_profile.store(profile); }
const char* profile_name(Profile profile) { return profile == Profile::F32 ? "f32" : "f64"; }

namespace {

struct Expansion {
  Shape out;
  std::int64_t inner = 1;  // elements of the smaller operand
  bool a_small = false;
  bool b_small = false;
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Expansion expansion(const char* op, const Shape& a, const Shape& b) {
  Expansion e;
  if (a == b) {
    e.out = a;
    e.inner = numel(a);
  } else if (is_suffix(b, a)) {
    e.out = a;
    e.inner = numel(b);
    e.b_small = true;
  } else if (is_suffix(a, b)) {
    e.out = b;
    e.inner = numel(a);
    e.a_small = true;
  } else {
    throw_shape_error(op, a, b);
  }
  return e;
}

// Folds a full-size gradient onto an operand that was expanded along leading
// axes. `factor` (when given) multiplies elementwise and is itself either
// full-size or expanded with the same inner extent.
template <typename Real>
void accumulate_expanded(const std::vector<Real>& full, std::int64_t inner, bool small, Real* sink,
                         const std::vector<Real>* factor, std::int64_t factor_inner, bool factor_small) {
  const auto n = static_cast<std::int64_t>(full.size());
  const std::int64_t block = small || factor_small ? (small ? inner : factor_inner) : n;
  const std::int64_t outer = n / block;
  const Real* g = full.data();
  const Real* fv = factor ? factor->data() : nullptr;
  if (!small && !factor_small) {
#pragma omp parallel for if (n > kParallelThreshold) schedule(static)
    for (std::int64_t i = 0; i < n; ++i) sink[i] += fv ? g[i] * fv[i] : g[i];
  } else if (!small) {
#pragma omp parallel for if (n > kParallelThreshold) schedule(static)
    for (std::int64_t o = 0; o < outer; ++o) {
      const Real* go = g + o * block;
      Real* so = sink + o * block;
      if (!fv) {
        for (std::int64_t i = 0; i < block; ++i) so[i] += go[i];
      } else {
        const Real* fo = factor_small ? fv : fv + o * block;
        for (std::int64_t i = 0; i < block; ++i) so[i] += go[i] * fo[i];
      }
    }
  } else {
    // Rows are added in order, so the result does not depend on threads.
    for (std::int64_t o = 0; o < outer; ++o) {
      const Real* go = g + o * block;
      if (!fv) {
        for (std::int64_t i = 0; i < block; ++i) sink[i] += go[i];
      } else {
        const Real* fo = factor_small ? fv : fv + o * block;
        for (std::int64_t i = 0; i < block; ++i) sink[i] += go[i] * fo[i];
      }
    }
  }
}

enum class BinaryKind { Add, Sub, Mul };

template <typename Real>
Tensor<Real> binary(const char* name, BinaryKind kind, const Tensor<Real>& a, const Tensor<Real>& b) {
  const Expansion e = expansion(name, a.shape(), b.shape());
  const auto n = numel(e.out);
  std::vector<Real> out(static_cast<std::size_t>(n));
  const Real* av = a.data().data();
  const Real* bv = b.data().data();
  const std::int64_t inner = e.inner;
  const bool as = e.a_small, bs = e.b_small;
  // Equal shapes are split into fixed chunks so that they parallelise too.
  const std::int64_t block = as || bs ? inner : std::min<std::int64_t>(n, 4096);
  const std::int64_t outer = (n + block - 1) / block;
#pragma omp parallel for if (n > kParallelThreshold) schedule(static)
  for (std::int64_t o = 0; o < outer; ++o) {
    const Real* x = as ? av : av + o * block;
    const Real* y = bs ? bv : bv + o * block;
    Real* z = out.data() + o * block;
    const std::int64_t len = std::min(block, n - o * block);
    switch (kind) {
      case BinaryKind::Add:
        for (std::int64_t i = 0; i < len; ++i) z[i] = x[i] + y[i];
        break;
      case BinaryKind::Sub:
        for (std::int64_t i = 0; i < len; ++i) z[i] = x[i] - y[i];
        break;
      case BinaryKind::Mul:
        for (std::int64_t i = 0; i < len; ++i) z[i] = x[i] * y[i];
        break;
    }
  }
  return record_op<Real>(e.out, std::move(out), {a, b}, [a, b, e, kind](const Node<Real>& node) {
    const auto& g = node.grad;
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    if (Real* da = grad_sink(a)) {
      if (kind == BinaryKind::Mul)
        accumulate_expanded(g, e.inner, e.a_small, da, &bv, e.inner, e.b_small);
      else
        accumulate_expanded<Real>(g, e.inner, e.a_small, da, nullptr, 1, false);
    }
    if (Real* db = grad_sink(b)) {
      if (kind == BinaryKind::Mul) {
        accumulate_expanded(g, e.inner, e.b_small, db, &av, e.inner, e.a_small);
      } else if (kind == BinaryKind::Add) {
        accumulate_expanded<Real>(g, e.inner, e.b_small, db, nullptr, 1, false);
      } else {
        std::vector<Real> neg(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
        accumulate_expanded<Real>(neg, e.inner, e.b_small, db, nullptr, 1, false);
      }
    }
  });
}

// Elementwise unary op. `derivative(x, y)` returns dy/dx given input and output.
template <typename Real, typename Fwd, typename Deriv>
Tensor<Real> unary(const Tensor<Real>& a, Fwd forward, Deriv derivative) {
  const auto n = a.numel();
  std::vector<Real> out(static_cast<std::size_t>(n));
  const Real* x = a.data().data();
#pragma omp parallel for if (n > kParallelThreshold) schedule(static)
  for (std::int64_t i = 0; i < n; ++i) out[i] = forward(x[i]);
  return record_op<Real>(a.shape(), std::move(out), {a}, [a, derivative](const Node<Real>& node) {
    Real* da = grad_sink(a);
    if (!da) return;
    const Real* x = a.node()->value.data();
    const Real* y = node.value.data();
    const Real* g = node.grad.data();
    const auto n = static_cast<std::int64_t>(node.value.size());
#pragma omp parallel for if (n > kParallelThreshold) schedule(static)
    for (std::int64_t i = 0; i < n; ++i) da[i] += g[i] * derivative(x[i], y[i]);
  });
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary("add", BinaryKind::Add, a, b);
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary("sub", BinaryKind::Sub, a, b);
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary("mul", BinaryKind::Mul, a, b);
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
  return unary(a, [c](Real x) { return x * c; }, [c](Real, Real) { return c; });
}

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw_shape_error("matmul", a.shape(), b.shape());
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Real> out(static_cast<std::size_t>(m * n));
  kernels::parallel::gemm(kernels::Trans::No, kernels::Trans::No, m, n, k, a.data().data(), b.data().data(),
                          out.data(), false);
  return record_op<Real>({m, n}, std::move(out), {a, b}, [a, b, m, k, n](const Node<Real>& node) {
    const Real* g = node.grad.data();
    if (Real* da = grad_sink(a))
      kernels::parallel::gemm(kernels::Trans::No, kernels::Trans::Yes, m, k, n, g, b.node()->value.data(), da, true);
    if (Real* db = grad_sink(b))
      kernels::parallel::gemm(kernels::Trans::Yes, kernels::Trans::No, k, n, m, a.node()->value.data(), g, db, true);
  });
}

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be [N, H, W, C], got " + to_string(x.shape()));
  const std::int64_t batch = x.dim(0), height = x.dim(1), width = x.dim(2), cin = x.dim(3);
  if (weight.rank() != 4 || weight.dim(0) != 3 || weight.dim(1) != 3 || weight.dim(2) != cin)
    throw_shape_error("conv2d", x.shape(), weight.shape());
  const std::int64_t cout = weight.dim(3);
  if (bias.shape() != Shape{cout}) throw_shape_error("conv2d", weight.shape(), bias.shape());

  const std::int64_t pixels = batch * height * width;
  auto cols = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(pixels * 9 * cin));
  kernels::parallel::im2col3x3(x.data().data(), batch, height, width, cin, cols->data());
  std::vector<Real> out(static_cast<std::size_t>(pixels * cout));
  const Real* bv = bias.data().data();
  for (std::int64_t p = 0; p < pixels; ++p) std::copy(bv, bv + cout, out.data() + p * cout);
  kernels::parallel::gemm(kernels::Trans::No, kernels::Trans::No, pixels, cout, 9 * cin, cols->data(),
                          weight.data().data(), out.data(), true);

  return record_op<Real>(
      {batch, height, width, cout}, std::move(out), {x, weight, bias},
      [x, weight, bias, cols, batch, height, width, cin, cout, pixels](const Node<Real>& node) {
        const Real* g = node.grad.data();
        if (Real* dw = grad_sink(weight))
          kernels::parallel::gemm(kernels::Trans::Yes, kernels::Trans::No, 9 * cin, cout, pixels, cols->data(), g,
                                  dw, true);
        if (Real* db = grad_sink(bias))
          for (std::int64_t p = 0; p < pixels; ++p)
            for (std::int64_t c = 0; c < cout; ++c) db[c] += g[p * cout + c];
        if (Real* dx = grad_sink(x)) {
          std::vector<Real> dcols(static_cast<std::size_t>(pixels * 9 * cin));
          kernels::parallel::gemm(kernels::Trans::No, kernels::Trans::Yes, pixels, 9 * cin, cout, g,
                                  weight.node()->value.data(), dcols.data(), false);
          kernels::parallel::col2im3x3(dcols.data(), batch, height, width, cin, dx);
        }
      });
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  return unary(a, [](Real x) { return x > 0 ? x : Real(0); }, [](Real x, Real) { return x > 0 ? Real(1) : Real(0); });
}

template <typename Real>
Tensor<Real> softplus(const Tensor<Real>& a) {
  return unary(
      a, [](Real x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](Real x, Real) { return x >= 0 ? Real(1) / (Real(1) + std::exp(-x)) : std::exp(x) / (Real(1) + std::exp(x)); });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
  return unary(
      a,
      [](Real x) { return x >= 0 ? Real(1) / (Real(1) + std::exp(-x)) : std::exp(x) / (Real(1) + std::exp(x)); },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& a) {
  return unary(a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return Real(1) - y * y; });
}

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& a) {
  return unary(a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

template <typename Real>
Tensor<Real> log(const Tensor<Real>& a) {
  return unary(a, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real(1) / x; });
}

template <typename Real>
Tensor<Real> sin(const Tensor<Real>& a) {
  return unary(a, [](Real x) { return std::sin(x); }, [](Real x, Real) { return std::cos(x); });
}

template <typename Real>
Tensor<Real> cos(const Tensor<Real>& a) {
  return unary(a, [](Real x) { return std::cos(x); }, [](Real x, Real) { return -std::sin(x); });
}

template <typename Real>
Tensor<Real> sqrt(const Tensor<Real>& a) {
  return unary(a, [](Real x) { return std::sqrt(x); }, [](Real, Real y) { return Real(0.5) / y; });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real total = 0;
  for (Real v : a.data()) total += v;
  return record_op<Real>({}, {total}, {a}, [a](const Node<Real>& node) {
    if (Real* da = grad_sink(a)) {
      const Real g = node.grad[0];
      for (std::int64_t i = 0; i < a.numel(); ++i) da[i] += g;
    }
  });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a, std::size_t axis) {
  const AxisSplit s = split_at(a.shape(), axis, "sum");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<Real> out(static_cast<std::size_t>(s.outer * s.inner), Real(0));
  const Real* x = a.data().data();
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t e = 0; e < s.extent; ++e)
      for (std::int64_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += x[(o * s.extent + e) * s.inner + i];
  return record_op<Real>(std::move(out_shape), std::move(out), {a}, [a, s](const Node<Real>& node) {
    Real* da = grad_sink(a);
    if (!da) return;
    const Real* g = node.grad.data();
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t e = 0; e < s.extent; ++e)
        for (std::int64_t i = 0; i < s.inner; ++i) da[(o * s.extent + e) * s.inner + i] += g[o * s.inner + i];
  });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  return scale(sum(a), Real(1) / static_cast<Real>(a.numel()));
}

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& a, std::size_t axis) {
  const AxisSplit s = split_at(a.shape(), axis, "softmax");
  std::vector<Real> out(static_cast<std::size_t>(a.numel()));
  const Real* x = a.data().data();
  const std::int64_t lanes = s.outer * s.inner;
#pragma omp parallel for if (lanes > 1024) schedule(static)
  for (std::int64_t lane = 0; lane < lanes; ++lane) {
    const std::int64_t o = lane / s.inner, i = lane % s.inner;
    auto at = [&](std::int64_t e) { return (o * s.extent + e) * s.inner + i; };
    Real mx = x[at(0)];
    for (std::int64_t e = 1; e < s.extent; ++e) mx = std::max(mx, x[at(e)]);
    Real total = 0;
    for (std::int64_t e = 0; e < s.extent; ++e) total += (out[at(e)] = std::exp(x[at(e)] - mx));
    for (std::int64_t e = 0; e < s.extent; ++e) out[at(e)] /= total;
  }
  return record_op<Real>(a.shape(), std::move(out), {a}, [a, s](const Node<Real>& node) {
    Real* da = grad_sink(a);
    if (!da) return;
    const Real* y = node.value.data();
    const Real* g = node.grad.data();
    const std::int64_t lanes = s.outer * s.inner;
#pragma omp parallel for if (lanes > 1024) schedule(static)
    for (std::int64_t lane = 0; lane < lanes; ++lane) {
      const std::int64_t o = lane / s.inner, i = lane % s.inner;
      auto at = [&](std::int64_t e) { return (o * s.extent + e) * s.inner + i; };
      Real dot = 0;
      for (std::int64_t e = 0; e < s.extent; ++e) dot += g[at(e)] * y[at(e)];
      for (std::int64_t e = 0; e < s.extent; ++e) da[at(e)] += y[at(e)] * (g[at(e)] - dot);
    }
  });
}

template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const AxisSplit base = split_at(first, axis, "concat");
  std::vector<std::int64_t> extents;
  std::int64_t total_extent = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != first.size()) throw_shape_error("concat", first, probe);
    probe[axis] = first[axis];
    if (probe != first) throw_shape_error("concat", first, p.shape());
    extents.push_back(p.dim(axis));
    total_extent += p.dim(axis);
  }
  Shape out_shape = first;
  out_shape[axis] = total_extent;
  std::vector<Real> out(static_cast<std::size_t>(numel(out_shape)));
  const std::int64_t row = total_extent * base.inner;
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::int64_t chunk = extents[k] * base.inner;
    const Real* src = parts[k].data().data();
    for (std::int64_t o = 0; o < base.outer; ++o)
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.data() + o * row + offset);
    offset += chunk;
  }
  return record_op<Real>(std::move(out_shape), std::move(out), parts,
                         [parts, extents, base, row](const Node<Real>& node) {
                           std::int64_t offset = 0;
                           for (std::size_t k = 0; k < parts.size(); ++k) {
                             const std::int64_t chunk = extents[k] * base.inner;
                             if (Real* dp = grad_sink(parts[k]))
                               for (std::int64_t o = 0; o < base.outer; ++o)
                                 for (std::int64_t j = 0; j < chunk; ++j)
                                   dp[o * chunk + j] += node.grad[o * row + offset + j];
                             offset += chunk;
                           }
                         });
}

template <typename Real>
Tensor<Real> slice(const Tensor<Real>& a, std::size_t axis, std::int64_t begin, std::int64_t end) {
  const AxisSplit s = split_at(a.shape(), axis, "slice");
  if (begin < 0 || end > s.extent || begin >= end)
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                     to_string(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::int64_t width = (end - begin) * s.inner;
  std::vector<Real> out(static_cast<std::size_t>(s.outer * width));
  const Real* x = a.data().data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    const Real* src = x + (o * s.extent + begin) * s.inner;
    std::copy(src, src + width, out.data() + o * width);
  }
  return record_op<Real>(std::move(out_shape), std::move(out), {a}, [a, s, begin, width](const Node<Real>& node) {
    Real* da = grad_sink(a);
    if (!da) return;
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t j = 0; j < width; ++j) da[(o * s.extent + begin) * s.inner + j] += node.grad[o * width + j];
  });
}

template <typename Real>
Tensor<Real> broadcast(const Tensor<Real>& a, const Shape& leading) {
  Shape out_shape = leading;
  out_shape.insert(out_shape.end(), a.shape().begin(), a.shape().end());
  const std::int64_t copies = numel(leading);
  const std::int64_t n = a.numel();
  std::vector<Real> out(static_cast<std::size_t>(copies * n));
  for (std::int64_t c = 0; c < copies; ++c) std::copy(a.data().begin(), a.data().end(), out.begin() + c * n);
  return record_op<Real>(std::move(out_shape), std::move(out), {a}, [a, copies, n](const Node<Real>& node) {
    Real* da = grad_sink(a);
    if (!da) return;
    for (std::int64_t c = 0; c < copies; ++c)
      for (std::int64_t i = 0; i < n; ++i) da[i] += node.grad[c * n + i];
  });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  if (numel(shape) != a.numel()) throw_shape_error("reshape", a.shape(), shape);
  std::vector<Real> out(a.data().begin(), a.data().end());
  return record_op<Real>(std::move(shape), std::move(out), {a}, [a](const Node<Real>& node) {
    Real* da = grad_sink(a);
    if (!da) return;
    for (std::size_t i = 0; i < node.grad.size(); ++i) da[i] += node.grad[i];
  });
}

template <typename Real>
Tensor<Real> swap_leading(const Tensor<Real>& a) {
  if (a.rank() < 2) throw ShapeError("swap_leading: need rank >= 2, got " + to_string(a.shape()));
  const std::int64_t n0 = a.dim(0), n1 = a.dim(1), block = a.numel() / (n0 * n1);
  Shape out_shape = a.shape();
  std::swap(out_shape[0], out_shape[1]);
  std::vector<Real> out(a.data().size());
  const Real* src = a.data().data();
  for (std::int64_t i = 0; i < n0; ++i)
    for (std::int64_t j = 0; j < n1; ++j)
      std::copy_n(src + (i * n1 + j) * block, block, out.begin() + (j * n0 + i) * block);
  return record_op<Real>(std::move(out_shape), std::move(out), {a}, [a, n0, n1, block](const Node<Real>& node) {
    Real* da = grad_sink(a);
    if (!da) return;
    for (std::int64_t i = 0; i < n0; ++i)
      for (std::int64_t j = 0; j < n1; ++j)
        for (std::int64_t b = 0; b < block; ++b) da[(i * n1 + j) * block + b] += node.grad[(j * n0 + i) * block + b];
  });
}

template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& table, std::span<const std::int64_t> index) {
  if (table.rank() < 1) throw ShapeError("gather_rows: table must have rank >= 1");
  const std::int64_t cols = table.shape().back();
  const std::int64_t rows = table.numel() / cols;
  for (auto i : index)
    if (i >= rows) throw ShapeError("gather_rows: row " + std::to_string(i) + " out of range for " + to_string(table.shape()));
  if (index.empty()) throw ShapeError("gather_rows: empty index");
  std::vector<Real> out(index.size() * static_cast<std::size_t>(cols));
  kernels::parallel::gather_rows(table.data().data(), cols, index, out.data());
  auto idx = std::make_shared<std::vector<std::int64_t>>(index.begin(), index.end());
  return record_op<Real>({static_cast<std::int64_t>(index.size()), cols}, std::move(out), {table},
                         [table, idx, cols](const Node<Real>& node) {
                           if (Real* dt = grad_sink(table))
                             kernels::parallel::scatter_add_rows(node.grad.data(), cols, *idx, dt);
                         });
}

template <typename Real>
Tensor<Real> weighted_sum(const Tensor<Real>& weights, const Tensor<Real>& values) {
  if (weights.rank() != 2 || values.rank() != 3 || values.dim(0) != weights.dim(0) || values.dim(1) != weights.dim(1))
    throw_shape_error("weighted_sum", weights.shape(), values.shape());
  const std::int64_t p_count = values.dim(0), n = values.dim(1), d = values.dim(2);
  std::vector<Real> out(static_cast<std::size_t>(p_count * d), Real(0));
  const Real* w = weights.data().data();
  const Real* v = values.data().data();
#pragma omp parallel for if (p_count > 256) schedule(static)
  for (std::int64_t p = 0; p < p_count; ++p)
    for (std::int64_t k = 0; k < n; ++k) {
      const Real wk = w[p * n + k];
      const Real* row = v + (p * n + k) * d;
      Real* dst = out.data() + p * d;
      for (std::int64_t j = 0; j < d; ++j) dst[j] += wk * row[j];
    }
  return record_op<Real>({p_count, d}, std::move(out), {weights, values},
                         [weights, values, p_count, n, d](const Node<Real>& node) {
                           const Real* g = node.grad.data();
                           const Real* w = weights.node()->value.data();
                           const Real* v = values.node()->value.data();
                           Real* dw = grad_sink(weights);
                           Real* dv = grad_sink(values);
#pragma omp parallel for if (p_count > 256) schedule(static)
                           for (std::int64_t p = 0; p < p_count; ++p)
                             for (std::int64_t k = 0; k < n; ++k) {
                               const Real* row = v + (p * n + k) * d;
                               const Real* gp = g + p * d;
                               if (dw) {
                                 Real acc = 0;
                                 for (std::int64_t j = 0; j < d; ++j) acc += gp[j] * row[j];
                                 dw[p * n + k] += acc;
                               }
                               if (dv) {
                                 const Real wk = w[p * n + k];
                                 Real* dst = dv + (p * n + k) * d;
                                 for (std::int64_t j = 0; j < d; ++j) dst[j] += wk * gp[j];
                               }
                             }
                         });
}

#define DFRF_INSTANTIATE_OPS(Real)                                                                       \
  template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                                   \
  template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                                   \
  template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                                   \
  template Tensor<Real> scale(const Tensor<Real>&, Real);                                                \
  template Tensor<Real> matmul(const Tensor<Real>&, const Tensor<Real>&);                                \
  template Tensor<Real> conv2d(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&);           \
  template Tensor<Real> relu(const Tensor<Real>&);                                                       \
  template Tensor<Real> softplus(const Tensor<Real>&);                                                   \
  template Tensor<Real> sigmoid(const Tensor<Real>&);                                                    \
  template Tensor<Real> tanh(const Tensor<Real>&);                                                       \
  template Tensor<Real> exp(const Tensor<Real>&);                                                        \
  template Tensor<Real> log(const Tensor<Real>&);                                                        \
  template Tensor<Real> sin(const Tensor<Real>&);                                                        \
  template Tensor<Real> cos(const Tensor<Real>&);                                                        \
  template Tensor<Real> sqrt(const Tensor<Real>&);                                                       \
  template Tensor<Real> sum(const Tensor<Real>&);                                                        \
  template Tensor<Real> sum(const Tensor<Real>&, std::size_t);                                           \
  template Tensor<Real> mean(const Tensor<Real>&);                                                       \
  template Tensor<Real> softmax(const Tensor<Real>&, std::size_t);                                       \
  template Tensor<Real> concat(const std::vector<Tensor<Real>>&, std::size_t);                           \
  template Tensor<Real> slice(const Tensor<Real>&, std::size_t, std::int64_t, std::int64_t);             \
  template Tensor<Real> broadcast(const Tensor<Real>&, const Shape&);                                    \
  template Tensor<Real> reshape(const Tensor<Real>&, Shape);                                             \
  template Tensor<Real> swap_leading(const Tensor<Real>&);                                               \
  template Tensor<Real> gather_rows(const Tensor<Real>&, std::span<const std::int64_t>);                 \
  template Tensor<Real> weighted_sum(const Tensor<Real>&, const Tensor<Real>&);

DFRF_INSTANTIATE_OPS(float)
DFRF_INSTANTIATE_OPS(double)

}  // namespace dfrf::diffmath
