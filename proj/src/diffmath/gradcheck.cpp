#include "dfrf/diffmath/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dfrf::diffmath {

namespace {
double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}
}  // namespace

template <typename Real>
double grad_check(const std::function<Tensor<Real>(const Tensor<Real>&)>& f, const Tensor<Real>& x, double step) {
  Tensor<Real> leaf(x.shape(), std::vector<Real>(x.data().begin(), x.data().end()), true);
  std::vector<Real> analytic(leaf.data().size(), Real(0));
  {
    Tape<Real> tape;
    Tensor<Real> out;
    {
      auto rec = tape.activate();
      out = f(leaf);
    }
    auto grads = tape.backward(out);
    if (auto it = grads.find(leaf.id()); it != grads.end())
      std::copy(it->second.data().begin(), it->second.data().end(), analytic.begin());
  }
  double worst = 0.0;
  std::vector<Real> probe(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const Real saved = probe[i];
    probe[i] = static_cast<Real>(saved + step);
    const double up = f(Tensor<Real>(x.shape(), probe)).item();
    probe[i] = static_cast<Real>(saved - step);
    const double down = f(Tensor<Real>(x.shape(), probe)).item();
    probe[i] = saved;
    worst = std::max(worst, rel_error(analytic[i], (up - down) / (2.0 * step)));
  }
  return worst;
}

template <typename Real>
GradCheckResult grad_check_params(const std::function<Tensor<Real>()>& loss, std::vector<Tensor<Real>> params,
                                  double step, std::int64_t max_per_param) {
  std::vector<std::vector<Real>> analytic;
  {
    Tape<Real> tape;
    Tensor<Real> out;
    {
      auto rec = tape.activate();
      out = loss();
    }
    auto grads = tape.backward(out);
    for (const auto& p : params) {
      std::vector<Real> g(static_cast<std::size_t>(p.numel()), Real(0));
      if (auto it = grads.find(p.id()); it != grads.end()) std::copy(it->second.data().begin(), it->second.data().end(), g.begin());
      analytic.push_back(std::move(g));
    }
  }
  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].data_mut();
    const auto n = static_cast<std::int64_t>(values.size());
    const std::int64_t probes = max_per_param > 0 ? std::min(n, max_per_param) : n;
    for (std::int64_t j = 0; j < probes; ++j) {
      const std::int64_t i = probes == n ? j : (j * n) / probes;
      const Real saved = values[i];
      values[i] = static_cast<Real>(saved + step);
      const double up = loss().item();
      values[i] = static_cast<Real>(saved - step);
      const double down = loss().item();
      values[i] = saved;
      const double err = rel_error(analytic[k][i], (up - down) / (2.0 * step));
      ++result.components;
      if (err >= result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

template double grad_check<float>(const std::function<Tensor<float>(const Tensor<float>&)>&, const Tensor<float>&, double);
template double grad_check<double>(const std::function<Tensor<double>(const Tensor<double>&)>&, const Tensor<double>&,
                                   double);
template GradCheckResult grad_check_params<float>(const std::function<Tensor<float>()>&, std::vector<Tensor<float>>,
                                                  double, std::int64_t);
template GradCheckResult grad_check_params<double>(const std::function<Tensor<double>()>&,
                                                   std::vector<Tensor<double>>, double, std::int64_t);

}  // namespace dfrf::diffmath
