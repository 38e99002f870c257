#pragma once

#include <cstdint>
#include <span>

// Hot loops used by the tensor engine and the rendering pipeline.
//
// Every kernel exists twice: `serial::` is the plain reference written
// straight from the definition, `parallel::` is the blocked, OpenMP
// version used in production. Parallel kernels partition OUTPUT elements
// across threads and never reduce across threads, so their results do not
// depend on the thread count.

namespace dfrf::kernels {

enum class Trans { No, Yes };

/// Bilinear sampling geometry for one (row, map) lookup, shared by the
/// forward and backward passes.
struct BilinearTap {
  std::int64_t x0, y0, x1, y1;  // enclosing cell corners (x1 == x0 on 1-wide maps)
  double fx, fy;                // fractional position inside the cell, in [0, 1]
  bool clamped_u, clamped_v;    // coordinate was outside the map; its derivative is zero
};

/// Clamps (u, v) into [0, W-1] x [0, H-1] and locates the enclosing cell.
BilinearTap bilinear_tap(double u, double v, std::int64_t height, std::int64_t width);

namespace serial {
#include "dfrf/diffmath/kernel_decls.inc"
}  // namespace serial

namespace parallel {
#include "dfrf/diffmath/kernel_decls.inc"
}  // namespace parallel

/// Number of worker threads the parallel kernels will use.
int worker_threads();

/// Caps the worker count (values < 1 are ignored).
void set_worker_threads(int n);

}  // namespace dfrf::kernels
