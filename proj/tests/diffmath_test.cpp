#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <random>

#include "dfrf/diffmath/gradcheck.hpp"
#include "dfrf/diffmath/ops.hpp"

namespace dm = dfrf::diffmath;
using T = dm::Tensor<double>;

namespace {

T random_tensor(dm::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool rg = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(dm::numel(shape)));
  for (auto& x : v) x = u(rng);
  return T(std::move(shape), std::move(v), rg);
}

// Values bounded away from zero, for ops with a kink or pole there.
T random_away_from_zero(dm::Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(static_cast<std::size_t>(dm::numel(shape)));
  for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return T(std::move(shape), std::move(v));
}

// Projects an op's output onto fixed random weights so every output
// component contributes to the scalar being differentiated.
std::function<T(const T&)> projected(std::function<T(const T&)> op, std::mt19937_64& rng, const dm::Shape& out) {
  T w = random_tensor(out, rng);
  return [op, w](const T& x) { return dm::sum(dm::mul(op(x), w)); };
}

}  // namespace

TEST(Primitives, AddIsElementwise) {
  auto r = dm::add(T({2}, {1, 2}), T({2}, {3, 4}));
  EXPECT_EQ(r.data()[0], 4);
  EXPECT_EQ(r.data()[1], 6);
}

TEST(Primitives, SoftmaxOfEqualScoresIsUniform) {
  auto r = dm::softmax(T({2}, {0, 0}), 0);
  EXPECT_DOUBLE_EQ(r.data()[0], 0.5);
  EXPECT_DOUBLE_EQ(r.data()[1], 0.5);
}

TEST(Primitives, MatmulByIdentityIsIdentity) {
  std::mt19937_64 rng(3);
  T eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  for (std::int64_t k : {1, 4, 17, 40}) {
    T x = random_tensor({3, k}, rng);
    auto r = dm::matmul(eye, x);
    ASSERT_EQ(r.shape(), x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(r.data()[i], x.data()[i]);
  }
}

TEST(Primitives, LeadingAxisExpansionOnly) {
  T a({2, 3}, {1, 2, 3, 4, 5, 6});
  auto r = dm::add(a, T({3}, {10, 20, 30}));
  EXPECT_EQ(r.data()[4], 25);
  auto s = dm::mul(a, T::scalar(2.0));
  EXPECT_EQ(s.data()[5], 12);
  // Trailing expansion ([2] against [2, 3]) is not allowed.
  EXPECT_THROW(dm::add(a, T({2}, {1, 2})), dm::ShapeError);
}

TEST(Primitives, ShapeMismatchReportsBothShapes) {
  try {
    dm::matmul(T({2, 3}, std::vector<double>(6, 0.0)), T({2, 3}, std::vector<double>(6, 0.0)));
    FAIL() << "expected ShapeError";
  } catch (const dm::ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("and [2, 3]"), std::string::npos) << msg;
  }
}

TEST(Backward, SquareSum) {
  T x({3}, {1, 2, 3}, true);
  dm::Tape<double> tape;
  T loss;
  {
    auto rec = tape.activate();
    loss = dm::sum(dm::mul(x, x));
  }
  auto grads = tape.backward(loss);
  const auto& g = grads.at(x.id());
  EXPECT_DOUBLE_EQ(g.data()[0], 2);
  EXPECT_DOUBLE_EQ(g.data()[1], 4);
  EXPECT_DOUBLE_EQ(g.data()[2], 6);
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, SigmoidAtZero) {
  T x({}, {0.0}, true);
  dm::Tape<double> tape;
  T loss;
  {
    auto rec = tape.activate();
    loss = dm::sigmoid(x);
  }
  auto grads = tape.backward(loss);
  EXPECT_DOUBLE_EQ(grads.at(x.id()).item(), 0.25);
}

TEST(Backward, RejectsNonScalarLoss) {
  T x({3}, {1, 2, 3}, true);
  dm::Tape<double> tape;
  T y;
  {
    auto rec = tape.activate();
    y = dm::mul(x, x);
  }
  EXPECT_THROW(tape.backward(y), dm::ShapeError);
}

TEST(Backward, ConstantsNeverAccumulate) {
  T x({3}, {1, 2, 3}, true);
  T c({3}, {4, 5, 6}, false);
  dm::Tape<double> tape;
  T loss;
  {
    auto rec = tape.activate();
    loss = dm::sum(dm::mul(x, c));
  }
  auto grads = tape.backward(loss);
  EXPECT_TRUE(grads.contains(x.id()));
  EXPECT_FALSE(grads.contains(c.id()));
  EXPECT_TRUE(c.node()->grad.empty());
}

TEST(Backward, NoRecordingWithoutActiveTape) {
  T x({3}, {1, 2, 3}, true);
  auto y = dm::mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

namespace {

struct Mlp {
  std::vector<T> weights, biases;
  Mlp(const std::vector<std::int64_t>& widths, std::mt19937_64& rng) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const double bound = std::sqrt(6.0 / static_cast<double>(widths[i] + widths[i + 1]));
      weights.push_back(random_tensor({widths[i], widths[i + 1]}, rng, -bound, bound, true));
      biases.push_back(random_tensor({widths[i + 1]}, rng, -0.1, 0.1, true));
    }
  }
  T operator()(const T& x) const {
    T h = x;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      h = dm::add(dm::matmul(h, weights[i]), biases[i]);
      if (i + 1 < weights.size()) h = dm::tanh(h);
    }
    return h;
  }
  std::vector<T> params() const {
    std::vector<T> p = weights;
    p.insert(p.end(), biases.begin(), biases.end());
    return p;
  }
};

}  // namespace

TEST(Backward, FourLayerMlpMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  Mlp mlp({5, 16, 16, 16, 3}, rng);
  T x = random_tensor({7, 5}, rng);
  T target = random_tensor({7, 3}, rng);
  auto loss = [&] {
    auto d = dm::sub(mlp(x), target);
    return dm::mean(dm::mul(d, d));
  };
  auto res = dm::grad_check_params<double>(loss, mlp.params(), 1e-5);
  EXPECT_LE(res.max_rel_error, 1e-4) << res.worst;
  EXPECT_GT(res.components, 500);
}

TEST(GradCheck, LinearFunctionIsExact) {
  std::mt19937_64 rng(5);
  std::function<T(const T&)> f = [](const T& x) { return dm::sum(x); };
  EXPECT_LE(dm::grad_check<double>(f, random_tensor({4, 5}, rng), 1e-5), 1e-10);
}

// Every primitive against central differences on 100 random inputs.
TEST(GradCheck, EveryPrimitiveOnRandomInputs) {
  std::mt19937_64 rng(2024);
  using Op = std::function<T(const T&)>;
  struct Case {
    const char* name;
    dm::Shape in, out;
    std::function<Op(std::mt19937_64&)> make;
    std::function<T(std::mt19937_64&, const dm::Shape&)> input;
  };
  auto uniform = [](std::mt19937_64& r, const dm::Shape& s) { return random_tensor(s, r); };
  auto positive = [](std::mt19937_64& r, const dm::Shape& s) { return random_tensor(s, r, 0.2, 2.0); };
  auto away = [](std::mt19937_64& r, const dm::Shape& s) { return random_away_from_zero(s, r); };
  auto fixed = [](auto build) { return [build](std::mt19937_64& r) -> Op { return build(r); }; };

  std::vector<Case> cases = {
      {"add", {3, 4}, {3, 4}, fixed([](std::mt19937_64& r) { T b = random_tensor({4}, r); return Op([b](const T& x) { return dm::add(x, b); }); }), uniform},
      {"add_rhs", {4}, {3, 4}, fixed([](std::mt19937_64& r) { T a = random_tensor({3, 4}, r); return Op([a](const T& x) { return dm::add(a, x); }); }), uniform},
      {"sub", {3, 4}, {3, 4}, fixed([](std::mt19937_64& r) { T b = random_tensor({3, 4}, r); return Op([b](const T& x) { return dm::sub(b, x); }); }), uniform},
      {"mul", {3, 4}, {3, 4}, fixed([](std::mt19937_64& r) { T b = random_tensor({4}, r); return Op([b](const T& x) { return dm::mul(x, b); }); }), uniform},
      {"mul_self", {5}, {5}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::mul(x, x); }); }), uniform},
      {"scale", {6}, {6}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::scale(x, -1.7); }); }), uniform},
      {"matmul_lhs", {3, 5}, {3, 2}, fixed([](std::mt19937_64& r) { T b = random_tensor({5, 2}, r); return Op([b](const T& x) { return dm::matmul(x, b); }); }), uniform},
      {"matmul_rhs", {5, 9}, {3, 9}, fixed([](std::mt19937_64& r) { T a = random_tensor({3, 5}, r); return Op([a](const T& x) { return dm::matmul(a, x); }); }), uniform},
      {"conv2d_input", {1, 4, 5, 2}, {1, 4, 5, 3}, fixed([](std::mt19937_64& r) { T w = random_tensor({3, 3, 2, 3}, r); T b = random_tensor({3}, r); return Op([w, b](const T& x) { return dm::conv2d(x, w, b); }); }), uniform},
      {"conv2d_weight", {3, 3, 2, 3}, {2, 4, 3, 3}, fixed([](std::mt19937_64& r) { T in = random_tensor({2, 4, 3, 2}, r); T b = random_tensor({3}, r); return Op([in, b](const T& w) { return dm::conv2d(in, w, b); }); }), uniform},
      {"conv2d_bias", {3}, {1, 3, 3, 3}, fixed([](std::mt19937_64& r) { T in = random_tensor({1, 3, 3, 2}, r); T w = random_tensor({3, 3, 2, 3}, r); return Op([in, w](const T& b) { return dm::conv2d(in, w, b); }); }), uniform},
      {"relu", {8}, {8}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::relu(x); }); }), away},
      {"softplus", {8}, {8}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::softplus(dm::scale(x, 4.0)); }); }), uniform},
      {"sigmoid", {8}, {8}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::sigmoid(dm::scale(x, 3.0)); }); }), uniform},
      {"tanh", {8}, {8}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::tanh(x); }); }), uniform},
      {"exp", {8}, {8}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::exp(x); }); }), uniform},
      {"log", {8}, {8}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::log(x); }); }), positive},
      {"sin", {8}, {8}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::sin(dm::scale(x, 3.0)); }); }), uniform},
      {"cos", {8}, {8}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::cos(dm::scale(x, 3.0)); }); }), uniform},
      {"sqrt", {8}, {8}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::sqrt(x); }); }), positive},
      {"sum_axis0", {3, 4, 2}, {4, 2}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::sum(x, 0); }); }), uniform},
      {"sum_axis2", {3, 4, 2}, {3, 4}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::sum(x, 2); }); }), uniform},
      {"mean", {3, 4}, {}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::mean(dm::mul(x, x)); }); }), uniform},
      {"softmax_last", {3, 5}, {3, 5}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::softmax(dm::scale(x, 2.0), 1); }); }), uniform},
      {"softmax_mid", {2, 4, 3}, {2, 4, 3}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::softmax(x, 1); }); }), uniform},
      {"concat", {2, 3}, {2, 7}, fixed([](std::mt19937_64& r) { T b = random_tensor({2, 4}, r); return Op([b](const T& x) { return dm::concat<double>({x, b, }, 1); }); }), uniform},
      {"concat_both", {2, 3}, {4, 3}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::concat<double>({x, dm::mul(x, x)}, 0); }); }), uniform},
      {"slice", {4, 5}, {4, 2}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::slice(x, 1, 2, 4); }); }), uniform},
      {"broadcast", {3}, {2, 2, 3}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::broadcast(x, {2, 2}); }); }), uniform},
      {"swap_leading", {2, 3, 4}, {3, 2, 4}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::swap_leading(x); }); }), uniform},
      {"reshape", {2, 6}, {3, 4}, fixed([](std::mt19937_64&) { return Op([](const T& x) { return dm::reshape(x, {3, 4}); }); }), uniform},
      {"gather_rows", {4, 3}, {5, 3}, fixed([](std::mt19937_64&) { return Op([](const T& x) { std::vector<std::int64_t> idx{2, 0, -1, 2, 3}; return dm::gather_rows<double>(x, idx); }); }), uniform},
      {"weighted_sum_w", {3, 4}, {3, 2}, fixed([](std::mt19937_64& r) { T v = random_tensor({3, 4, 2}, r); return Op([v](const T& w) { return dm::weighted_sum(w, v); }); }), uniform},
      {"weighted_sum_v", {3, 4, 2}, {3, 2}, fixed([](std::mt19937_64& r) { T w = random_tensor({3, 4}, r); return Op([w](const T& v) { return dm::weighted_sum(w, v); }); }), uniform},
  };

  for (const auto& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      auto f = projected(c.make(rng), rng, c.out);
      worst = std::max(worst, dm::grad_check<double>(f, c.input(rng, c.in), 1e-5));
    }
    EXPECT_LE(worst, 1e-4) << c.name;
  }
}

TEST(Backward, IdenticalTapesGiveBitIdenticalGradients) {
  std::mt19937_64 rng(77);
  Mlp mlp({6, 32, 32, 1}, rng);
  T x = random_tensor({50, 6}, rng);
  auto run = [&] {
    dm::Tape<double> tape;
    T loss;
    {
      auto rec = tape.activate();
      loss = dm::sum(dm::softplus(mlp(x)));
    }
    auto grads = tape.backward(loss);
    std::vector<double> flat;
    for (const auto& p : mlp.params()) {
      auto d = grads.at(p.id()).data();
      flat.insert(flat.end(), d.begin(), d.end());
    }
    return flat;
  };
  const auto first = run();
  const auto second = run();
  ASSERT_EQ(first.size(), second.size());
  EXPECT_EQ(0, std::memcmp(first.data(), second.data(), first.size() * sizeof(double)));
}

TEST(Backward, GradientIsLinearInTheLoss) {
  std::mt19937_64 rng(91);
  for (int trial = 0; trial < 20; ++trial) {
    Mlp mlp({4, 8, 8, 2}, rng);
    T x = random_tensor({6, 4}, rng);
    auto l1 = [&] { return dm::sum(dm::exp(dm::scale(mlp(x), 0.3))); };
    auto l2 = [&] { return dm::mean(dm::softmax(mlp(x), 1)); };
    auto grads_of = [&](auto&& fn) {
      dm::Tape<double> tape;
      T loss;
      {
        auto rec = tape.activate();
        loss = fn();
      }
      return tape.backward(loss);
    };
    auto g1 = grads_of(l1);
    auto g2 = grads_of(l2);
    auto g12 = grads_of([&] { return dm::add(l1(), l2()); });
    for (const auto& p : mlp.params()) {
      for (std::int64_t i = 0; i < p.numel(); ++i) {
        const double expect = g1.at(p.id()).data()[i] + g2.at(p.id()).data()[i];
        EXPECT_NEAR(g12.at(p.id()).data()[i], expect, 1e-12 * std::max(1.0, std::abs(expect)));
      }
    }
  }
}
