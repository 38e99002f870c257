#include "dfrf/training/adam.hpp"

#include <cmath>

namespace dfrf::training {

namespace dm = diffmath;

template <typename Real>
void adam_step(const dm::ParamList<Real>& params, const typename dm::Tape<Real>::GradMap& grads,
               AdamState<Real>& state, double lr) {
  for (const auto& p : params) {
    const auto it = grads.find(p.tensor.id());
    if (it == grads.end()) continue;
    const auto& g = it->second;
    if (g.shape() != p.tensor.shape()) dm::throw_shape_error("adam_step", p.tensor.shape(), g.shape());
    auto& slot = state.slots[p.name];
    const auto n = static_cast<std::size_t>(p.tensor.numel());
    if (slot.m.empty()) {
      slot.m.assign(n, Real(0));
      slot.v.assign(n, Real(0));
    }
    if (slot.m.size() != n || slot.v.size() != n)
      throw dm::ShapeError("adam_step: moments of " + p.name + " hold " + std::to_string(slot.m.size()) +
                           " values for " + dm::to_string(p.tensor.shape()));
    ++slot.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(slot.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(slot.step));
    auto handle = p.tensor;  // shallow: updates land in the model
    auto w = handle.data_mut();
    const auto gd = g.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = gd[i];
      const double m = state.beta1 * slot.m[i] + (1.0 - state.beta1) * gi;
      const double v = state.beta2 * slot.v[i] + (1.0 - state.beta2) * gi * gi;
      slot.m[i] = static_cast<Real>(m);
      slot.v[i] = static_cast<Real>(v);
      w[i] = static_cast<Real>(w[i] - lr * (m / c1) / (std::sqrt(v / c2) + state.eps));
    }
  }
}

double decayed_lr(double lr_start, double lr_end, std::int64_t iteration, std::int64_t total) {
  if (total <= 0) return lr_start;
  return lr_start * std::pow(lr_end / lr_start, static_cast<double>(iteration) / static_cast<double>(total));
}

template void adam_step(const dm::ParamList<float>&, const dm::Tape<float>::GradMap&, AdamState<float>&, double);
template void adam_step(const dm::ParamList<double>&, const dm::Tape<double>::GradMap&, AdamState<double>&, double);

}  // namespace dfrf::training
