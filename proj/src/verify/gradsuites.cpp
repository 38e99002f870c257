#include "dfrf/verify/gradsuites.hpp"

#include <algorithm>
#include <chrono>
#include <random>

#include "dfrf/dataio/synthetic.hpp"
#include "dfrf/diffmath/gradcheck.hpp"
#include "dfrf/renderer/pipeline.hpp"

namespace dfrf::verify {

namespace {

namespace dm = diffmath;
using T = dm::Tensor<double>;
using Op = std::function<T(const T&)>;

constexpr double kStep = 1e-6;

T uniform(dm::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(dm::numel(shape)));
  for (auto& x : v) x = u(rng);
  return T(std::move(shape), std::move(v), requires_grad);
}

// Magnitudes in [0.05, 1] with random sign, for ops with a kink at zero.
T away_from_zero(dm::Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(static_cast<std::size_t>(dm::numel(shape)));
  for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return T(std::move(shape), std::move(v));
}

void randomize(const dm::ParamList<double>& params, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> g(0.0, stddev);
  for (const auto& p : params) {
    auto h = p.tensor;
    for (auto& x : h.data_mut()) x = g(rng);
  }
}

std::vector<T> tensors_of(const dm::ParamList<double>& params) {
  std::vector<T> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

template <typename F>
SuiteResult timed(const std::string& name, F body) {
  const auto start = std::chrono::steady_clock::now();
  SuiteResult r = body();
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void absorb(SuiteResult& into, const dm::GradCheckResult& r, const std::string& label) {
  into.components += r.components;
  if (r.max_rel_error > into.max_rel_error || into.worst.empty()) {
    into.max_rel_error = std::max(into.max_rel_error, r.max_rel_error);
    into.worst = label + " " + r.worst;
  }
}

SuiteResult primitives() {
  std::mt19937_64 rng(2024);
  struct Case {
    const char* name;
    dm::Shape in, out;
    std::function<Op(std::mt19937_64&)> make;
    int input;  // 0 uniform, 1 positive, 2 away from zero
  };
  auto fixed = [](Op op) { return [op](std::mt19937_64&) { return op; }; };
  const std::vector<Case> cases = {
      {"add", {3, 4}, {3, 4}, [](std::mt19937_64& r) { T b = uniform({4}, r); return Op([b](const T& x) { return dm::add(x, b); }); }, 0},
      {"add_expanded", {4}, {3, 4}, [](std::mt19937_64& r) { T a = uniform({3, 4}, r); return Op([a](const T& x) { return dm::add(a, x); }); }, 0},
      {"sub", {3, 4}, {3, 4}, [](std::mt19937_64& r) { T b = uniform({3, 4}, r); return Op([b](const T& x) { return dm::sub(b, x); }); }, 0},
      {"mul", {3, 4}, {3, 4}, [](std::mt19937_64& r) { T b = uniform({4}, r); return Op([b](const T& x) { return dm::mul(x, b); }); }, 0},
      {"mul_self", {5}, {5}, fixed([](const T& x) { return dm::mul(x, x); }), 0},
      {"scale", {6}, {6}, fixed([](const T& x) { return dm::scale(x, -1.7); }), 0},
      {"matmul_lhs", {3, 5}, {3, 2}, [](std::mt19937_64& r) { T b = uniform({5, 2}, r); return Op([b](const T& x) { return dm::matmul(x, b); }); }, 0},
      {"matmul_rhs", {5, 9}, {3, 9}, [](std::mt19937_64& r) { T a = uniform({3, 5}, r); return Op([a](const T& x) { return dm::matmul(a, x); }); }, 0},
      {"conv2d_input", {1, 4, 5, 2}, {1, 4, 5, 3}, [](std::mt19937_64& r) { T w = uniform({3, 3, 2, 3}, r); T b = uniform({3}, r); return Op([w, b](const T& x) { return dm::conv2d(x, w, b); }); }, 0},
      {"conv2d_weight", {3, 3, 2, 3}, {2, 4, 3, 3}, [](std::mt19937_64& r) { T in = uniform({2, 4, 3, 2}, r); T b = uniform({3}, r); return Op([in, b](const T& w) { return dm::conv2d(in, w, b); }); }, 0},
      {"conv2d_bias", {3}, {1, 3, 3, 3}, [](std::mt19937_64& r) { T in = uniform({1, 3, 3, 2}, r); T w = uniform({3, 3, 2, 3}, r); return Op([in, w](const T& b) { return dm::conv2d(in, w, b); }); }, 0},
      {"relu", {8}, {8}, fixed([](const T& x) { return dm::relu(x); }), 2},
      {"softplus", {8}, {8}, fixed([](const T& x) { return dm::softplus(dm::scale(x, 4.0)); }), 0},
      {"sigmoid", {8}, {8}, fixed([](const T& x) { return dm::sigmoid(dm::scale(x, 3.0)); }), 0},
      {"tanh", {8}, {8}, fixed([](const T& x) { return dm::tanh(x); }), 0},
      {"exp", {8}, {8}, fixed([](const T& x) { return dm::exp(x); }), 0},
      {"log", {8}, {8}, fixed([](const T& x) { return dm::log(x); }), 1},
      {"sin", {8}, {8}, fixed([](const T& x) { return dm::sin(dm::scale(x, 3.0)); }), 0},
      {"cos", {8}, {8}, fixed([](const T& x) { return dm::cos(dm::scale(x, 3.0)); }), 0},
      {"sqrt", {8}, {8}, fixed([](const T& x) { return dm::sqrt(x); }), 1},
      {"sum_axis", {3, 4, 2}, {3, 4}, fixed([](const T& x) { return dm::sum(x, 2); }), 0},
      {"mean", {3, 4}, {}, fixed([](const T& x) { return dm::mean(dm::mul(x, x)); }), 0},
      {"softmax", {2, 4, 3}, {2, 4, 3}, fixed([](const T& x) { return dm::softmax(x, 1); }), 0},
      {"concat", {2, 3}, {4, 3}, fixed([](const T& x) { return dm::concat<double>({x, dm::mul(x, x)}, 0); }), 0},
      {"slice", {4, 5}, {4, 2}, fixed([](const T& x) { return dm::slice(x, 1, 2, 4); }), 0},
      {"broadcast", {3}, {2, 2, 3}, fixed([](const T& x) { return dm::broadcast(x, {2, 2}); }), 0},
      {"swap_leading", {2, 3, 4}, {3, 2, 4}, fixed([](const T& x) { return dm::swap_leading(x); }), 0},
      {"reshape", {2, 6}, {3, 4}, fixed([](const T& x) { return dm::reshape(x, {3, 4}); }), 0},
      {"gather_rows", {4, 3}, {5, 3}, fixed([](const T& x) { return dm::gather_rows<double>(x, std::vector<std::int64_t>{2, 0, -1, 2, 3}); }), 0},
      {"weighted_sum", {3, 4}, {3, 2}, [](std::mt19937_64& r) { T v = uniform({3, 4, 2}, r); return Op([v](const T& w) { return dm::weighted_sum(w, v); }); }, 0},
  };
  SuiteResult result;
  for (const auto& c : cases) {
    for (int trial = 0; trial < 10; ++trial) {
      const Op op = c.make(rng);
      const T w = uniform(c.out, rng);
      const Op f = [op, w](const T& x) { return dm::sum(dm::mul(op(x), w)); };
      const T x = c.input == 1 ? uniform(c.in, rng, 0.2, 2.0) : c.input == 2 ? away_from_zero(c.in, rng) : uniform(c.in, rng);
      const double err = dm::grad_check<double>(f, x, kStep);
      result.components += x.numel();
      if (err > result.max_rel_error || result.worst.empty()) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        result.worst = c.name;
      }
    }
  }
  return result;
}

SuiteResult bilinear() {
  std::mt19937_64 rng(31);
  SuiteResult result;
  for (int trial = 0; trial < 5; ++trial) {
    const std::int64_t H = 5, W = 6, R = 7;
    T maps = uniform({2, H, W, 3}, rng, -1.0, 1.0, true);
    // Fractional parts stay clear of the grid lines where the soft index
    // has its kinks.
    std::uniform_int_distribution<int> cell(0, 4);
    std::uniform_real_distribution<double> frac(0.05, 0.95);
    std::vector<double> cv(static_cast<std::size_t>(2 * R));
    for (std::int64_t r = 0; r < R; ++r) {
      cv[2 * r] = cell(rng) + frac(rng);
      cv[2 * r + 1] = std::min(cell(rng), 3) + frac(rng);
    }
    T coords({R, 2}, cv, true);
    const std::vector<std::int64_t> which{0, 1, 1, -1, 0, 1, 0};
    const T mix = uniform({R, 3}, rng);
    auto loss = [&] { return dm::sum(dm::mul(conditioning::sample_bilinear<double>(maps, coords, which), mix)); };
    absorb(result, dm::grad_check_params<double>(loss, {maps, coords}, kStep), "trial " + std::to_string(trial));
  }
  return result;
}

SuiteResult warp_mlp() {
  std::mt19937_64 rng(32);
  SuiteResult result;
  for (int trial = 0; trial < 3; ++trial) {
    warpfield::WarpField<double> warp(7, 4, 8, rng);
    dm::ParamList<double> params;
    warp.collect("warp", params);
    randomize(params, rng, 0.5);
    T code = uniform({5, 7}, rng, -1.0, 1.0, true);
    T features = uniform({3, 5, 4}, rng, -1.0, 1.0, true);
    const T mix = uniform({3, 5, 2}, rng);
    auto loss = [&] { return dm::sum(dm::mul(warp(code, features), mix)); };
    auto inputs = tensors_of(params);
    inputs.push_back(code);
    inputs.push_back(features);
    absorb(result, dm::grad_check_params<double>(loss, inputs, kStep), "trial " + std::to_string(trial));
  }
  return result;
}

SuiteResult radiance_field() {
  std::mt19937_64 rng(33);
  SuiteResult result;
  for (int trial = 0; trial < 3; ++trial) {
    radiance::RadianceField<double> field({3, 16, 2}, 4, 4, rng);
    dm::ParamList<double> params;
    field.collect("field", params);
    const std::int64_t P = 6;
    const auto points = uniform({P, 3}, rng).data();
    std::vector<double> pts(points.begin(), points.end());
    std::vector<double> dirs(static_cast<std::size_t>(3 * P));
    std::normal_distribution<double> g(0.0, 1.0);
    for (std::int64_t p = 0; p < P; ++p) {
      double d[3] = {g(rng), g(rng), g(rng)};
      const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
      for (int k = 0; k < 3; ++k) dirs[static_cast<std::size_t>(3 * p + k)] = d[k] / n;
    }
    T cond = uniform({4}, rng, -1.0, 1.0, true);
    T features = uniform({P, 4}, rng, -1.0, 1.0, true);
    const T mix_s = uniform({P}, rng), mix_c = uniform({P, 3}, rng);
    auto loss = [&] {
      const auto out = field(pts, dirs, cond, features);
      return dm::add(dm::sum(dm::mul(out.sigma, mix_s)), dm::sum(dm::mul(out.rgb, mix_c)));
    };
    auto inputs = tensors_of(params);
    inputs.push_back(cond);
    inputs.push_back(features);
    absorb(result, dm::grad_check_params<double>(loss, inputs, kStep), "trial " + std::to_string(trial));
  }
  return result;
}

SuiteResult render_ray() {
  std::mt19937_64 rng(34);
  SuiteResult result;
  for (int trial = 0; trial < 10; ++trial) {
    const int S = 8;
    std::vector<double> depths(S);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double t = 1.0;
    for (auto& d : depths) d = (t += 0.05 + 0.2 * u(rng));
    const double z_far = t + 0.3;
    T sigma = uniform({S}, rng, 0.0, 3.0, true);
    T rgb = uniform({S, 3}, rng, 0.0, 1.0, true);
    const double bg[3] = {u(rng), u(rng), u(rng)};
    const T mix = uniform({3}, rng);
    auto loss = [&] { return dm::sum(dm::mul(renderer::render_ray<double>(depths, z_far, sigma, rgb, bg), mix)); };
    absorb(result, dm::grad_check_params<double>(loss, {sigma, rgb}, kStep), "trial " + std::to_string(trial));
  }
  return result;
}

SuiteResult pipeline() {
  dataio::SyntheticSpec spec;
  spec.seed = 11;
  spec.n_frames = 6;
  spec.resolution = 16;
  spec.condition_dim = 4;
  spec.supersample = 1;
  const auto scene = dataio::generate_synthetic_scene(spec);

  renderer::ModelConfig config;
  config.field = {3, 16, 2};
  config.condition_dim = 4;
  config.feature_dim = 4;
  config.warp_hidden = 8;
  config.attention_hidden = 4;
  config.filter_hidden = 4;
  config.filter_window = 3;
  renderer::Model<double> model(config, 21);
  // The warp output layer starts at zero; nudge it so the whole joint chain
  // carries gradient.
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 0.3);
  for (auto& p : model.warp_parameters())
    if (p.name.find("layer3") != std::string::npos)
      for (auto& x : p.tensor.data_mut()) x = g(rng);

  const std::vector<std::int64_t> ref_frames{0, 1, 2};
  const std::vector<std::int64_t> pixels{7 * 16 + 8, 9 * 16 + 6};
  const auto rays = renderer::make_rays(scene.frames[4], pixels, 4, renderer::bounds_of(scene), nullptr);
  const T truth({2, 3}, rays.target);
  auto run = [&](renderer::Stage stage) {
    const auto refs = renderer::prepare_references(model, scene, ref_frames);
    const auto cond = model.filter.filter(scene.track, 4, config.filter_window);
    return renderer::forward(model, refs, cond, rays, stage, scene.world_scale);
  };
  // The regulariser's opacity weights are graph constants, so the
  // perturbed evaluations hold them fixed as well.
  const auto frozen = run(renderer::Stage::Joint).alphas;
  SuiteResult result;
  for (auto stage : {renderer::Stage::Coarse, renderer::Stage::Joint}) {
    auto loss = [&] {
      const auto out = run(stage);
      auto l = renderer::mse_loss(out.rgb, truth);
      if (stage == renderer::Stage::Coarse) return l;
      return renderer::total_loss(l, warpfield::offset_regularizer(out.offsets, std::span<const double>(frozen)), 0.1);
    };
    absorb(result, dm::grad_check_params<double>(loss, tensors_of(model.parameters()), kStep, 6),
           renderer::stage_name(stage));
  }
  return result;
}

}  // namespace

const std::vector<Suite>& gradient_suites() {
  static const std::vector<Suite> suites = {
      {"primitives", [] { return timed("primitives", primitives); }},
      {"bilinear", [] { return timed("bilinear", bilinear); }},
      {"warp_mlp", [] { return timed("warp_mlp", warp_mlp); }},
      {"radiance_field", [] { return timed("radiance_field", radiance_field); }},
      {"render_ray", [] { return timed("render_ray", render_ray); }},
      {"pipeline", [] { return timed("pipeline", pipeline); }},
  };
  return suites;
}

}  // namespace dfrf::verify
