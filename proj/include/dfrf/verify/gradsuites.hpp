#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

// Finite-difference checks of every differentiable piece, run in the 64-bit
// profile. Shared by `dfrf gradcheck` and the acceptance runner.

namespace dfrf::verify {

inline constexpr double kGradTolerance = 1e-4;

struct SuiteResult {
  std::string name;
  double max_rel_error = 0.0;
  std::int64_t components = 0;
  std::string worst;
  double seconds = 0.0;
  bool passed() const { return max_rel_error <= kGradTolerance; }
};

struct Suite {
  std::string name;
  std::function<SuiteResult()> run;
};

/// primitives, bilinear, warp_mlp, radiance_field, render_ray, pipeline
const std::vector<Suite>& gradient_suites();

}  // namespace dfrf::verify
