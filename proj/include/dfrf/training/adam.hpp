#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dfrf/diffmath/layers.hpp"

namespace dfrf::training {

template <typename Real>
struct AdamSlot {
  std::vector<Real> m, v;
  std::int64_t step = 0;
};

/// Moments are kept per parameter name. Each parameter counts its own
/// steps, so a module that starts receiving gradients late (the warp field
/// after the coarse stage) gets a fresh bias correction.
template <typename Real>
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::map<std::string, AdamSlot<Real>> slots;
};

/// One bias-corrected Adam update of every parameter that has an entry in
/// `grads` (keyed by tensor node id). Parameters without a gradient are left
/// alone, moments included. Throws diffmath::ShapeError when a gradient or
/// stored moment does not match its parameter.
template <typename Real>
void adam_step(const diffmath::ParamList<Real>& params, const typename diffmath::Tape<Real>::GradMap& grads,
               AdamState<Real>& state, double lr);

/// Exponential decay from lr_start at iteration 0 to lr_end at `total`.
double decayed_lr(double lr_start, double lr_end, std::int64_t iteration, std::int64_t total);

}  // namespace dfrf::training
