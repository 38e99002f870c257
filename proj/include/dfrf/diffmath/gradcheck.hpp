#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dfrf/diffmath/tensor.hpp"

namespace dfrf::diffmath {

/// Largest |analytic - numeric| / max(1, |numeric|) over the checked
/// components, using central differences of width 2*step.
template <typename Real>
double grad_check(const std::function<Tensor<Real>(const Tensor<Real>&)>& f, const Tensor<Real>& x, double step);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param index>[<component>]" of the worst component
  std::int64_t components = 0;
};

/// Checks d(loss)/d(param) for every tensor in `params`, perturbing them in
/// place. `loss` must rebuild its graph from the current parameter values on
/// every call. When `max_per_param` > 0 only that many evenly spaced
/// components of each parameter are probed.
template <typename Real>
GradCheckResult grad_check_params(const std::function<Tensor<Real>()>& loss, std::vector<Tensor<Real>> params,
                                  double step, std::int64_t max_per_param = 0);

}  // namespace dfrf::diffmath
