#include "dfrf/diffmath/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include <omp.h>

namespace dfrf::kernels {

BilinearTap bilinear_tap(double u, double v, std::int64_t height, std::int64_t width) {
  BilinearTap tap{};
  const double max_u = static_cast<double>(width - 1);
  const double max_v = static_cast<double>(height - 1);
  tap.clamped_u = !(u >= 0.0 && u <= max_u);
  tap.clamped_v = !(v >= 0.0 && v <= max_v);
  const double cu = std::clamp(std::isnan(u) ? 0.0 : u, 0.0, max_u);
  const double cv = std::clamp(std::isnan(v) ? 0.0 : v, 0.0, max_v);
  tap.x0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(cu)), std::max<std::int64_t>(width - 2, 0));
  tap.y0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(cv)), std::max<std::int64_t>(height - 2, 0));
  tap.x1 = std::min(tap.x0 + 1, width - 1);
  tap.y1 = std::min(tap.y0 + 1, height - 1);
  tap.fx = tap.x1 == tap.x0 ? 0.0 : cu - static_cast<double>(tap.x0);
  tap.fy = tap.y1 == tap.y0 ? 0.0 : cv - static_cast<double>(tap.y0);
  return tap;
}

int worker_threads() { return omp_get_max_threads(); }

void set_worker_threads(int n) {
  if (n >= 1) omp_set_num_threads(n);
}

// ---------------------------------------------------------------------------
// serial reference
// ---------------------------------------------------------------------------
namespace serial {

template <typename Real>
void gemm(Trans trans_a, Trans trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const Real* a, const Real* b, Real* c, bool accumulate) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::int64_t p = 0; p < k; ++p) {
        const Real av = trans_a == Trans::No ? a[i * k + p] : a[p * m + i];
        const Real bv = trans_b == Trans::No ? b[p * n + j] : b[j * k + p];
        acc += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

template <typename Real>
void im2col3x3(const Real* x, std::int64_t batch, std::int64_t height, std::int64_t width,
               std::int64_t channels, Real* cols) {
  const std::int64_t row_len = 9 * channels;
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t y = 0; y < height; ++y)
      for (std::int64_t xx = 0; xx < width; ++xx) {
        Real* row = cols + ((b * height + y) * width + xx) * row_len;
        for (std::int64_t ky = 0; ky < 3; ++ky)
          for (std::int64_t kx = 0; kx < 3; ++kx)
            for (std::int64_t ch = 0; ch < channels; ++ch) {
              const std::int64_t sy = y + ky - 1, sx = xx + kx - 1;
              const bool inside = sy >= 0 && sy < height && sx >= 0 && sx < width;
              row[(ky * 3 + kx) * channels + ch] =
                  inside ? x[((b * height + sy) * width + sx) * channels + ch] : Real(0);
            }
      }
}

template <typename Real>
void col2im3x3(const Real* cols, std::int64_t batch, std::int64_t height, std::int64_t width,
               std::int64_t channels, Real* dx) {
  const std::int64_t row_len = 9 * channels;
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t y = 0; y < height; ++y)
      for (std::int64_t xx = 0; xx < width; ++xx) {
        const Real* row = cols + ((b * height + y) * width + xx) * row_len;
        for (std::int64_t ky = 0; ky < 3; ++ky)
          for (std::int64_t kx = 0; kx < 3; ++kx) {
            const std::int64_t sy = y + ky - 1, sx = xx + kx - 1;
            if (sy < 0 || sy >= height || sx < 0 || sx >= width) continue;
            for (std::int64_t ch = 0; ch < channels; ++ch)
              dx[((b * height + sy) * width + sx) * channels + ch] += row[(ky * 3 + kx) * channels + ch];
          }
      }
}

template <typename Real>
void gather_rows(const Real* table, std::int64_t cols, std::span<const std::int64_t> index,
                 Real* out) {
  for (std::size_t r = 0; r < index.size(); ++r)
    for (std::int64_t c = 0; c < cols; ++c)
      out[r * cols + c] = index[r] < 0 ? Real(0) : table[index[r] * cols + c];
}

template <typename Real>
void scatter_add_rows(const Real* d_out, std::int64_t cols, std::span<const std::int64_t> index,
                      Real* d_table) {
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0) continue;
    for (std::int64_t c = 0; c < cols; ++c) d_table[index[r] * cols + c] += d_out[r * cols + c];
  }
}

template <typename Real>
void bilinear_forward(const Real* maps, std::int64_t height, std::int64_t width, std::int64_t depth,
                      const Real* coords, std::span<const std::int64_t> map_of_row, Real* out) {
  for (std::size_t r = 0; r < map_of_row.size(); ++r) {
    Real* dst = out + r * depth;
    if (map_of_row[r] < 0) {
      std::fill(dst, dst + depth, Real(0));
      continue;
    }
    const auto t = bilinear_tap(coords[2 * r], coords[2 * r + 1], height, width);
    const Real* base = maps + map_of_row[r] * height * width * depth;
    auto at = [&](std::int64_t y, std::int64_t x, std::int64_t d) { return base[(y * width + x) * depth + d]; };
    for (std::int64_t d = 0; d < depth; ++d) {
      const double top = (1 - t.fx) * at(t.y0, t.x0, d) + t.fx * at(t.y0, t.x1, d);
      const double bottom = (1 - t.fx) * at(t.y1, t.x0, d) + t.fx * at(t.y1, t.x1, d);
      dst[d] = static_cast<Real>((1 - t.fy) * top + t.fy * bottom);
    }
  }
}

template <typename Real>
void bilinear_backward(const Real* maps, std::int64_t height, std::int64_t width, std::int64_t depth,
                       const Real* coords, std::span<const std::int64_t> map_of_row, const Real* d_out,
                       Real* d_maps, Real* d_coords) {
  for (std::size_t r = 0; r < map_of_row.size(); ++r) {
    if (map_of_row[r] < 0) continue;
    const auto t = bilinear_tap(coords[2 * r], coords[2 * r + 1], height, width);
    const std::int64_t offset = map_of_row[r] * height * width * depth;
    const Real* base = maps + offset;
    auto idx = [&](std::int64_t y, std::int64_t x, std::int64_t d) { return (y * width + x) * depth + d; };
    double du = 0, dv = 0;
    for (std::int64_t d = 0; d < depth; ++d) {
      const double g = d_out[r * depth + d];
      if (d_maps) {
        Real* dm = d_maps + offset;
        dm[idx(t.y0, t.x0, d)] += static_cast<Real>(g * (1 - t.fx) * (1 - t.fy));
        dm[idx(t.y0, t.x1, d)] += static_cast<Real>(g * t.fx * (1 - t.fy));
        dm[idx(t.y1, t.x0, d)] += static_cast<Real>(g * (1 - t.fx) * t.fy);
        dm[idx(t.y1, t.x1, d)] += static_cast<Real>(g * t.fx * t.fy);
      }
      const double f00 = base[idx(t.y0, t.x0, d)], f01 = base[idx(t.y0, t.x1, d)];
      const double f10 = base[idx(t.y1, t.x0, d)], f11 = base[idx(t.y1, t.x1, d)];
      du += g * ((1 - t.fy) * (f01 - f00) + t.fy * (f11 - f10));
      dv += g * ((1 - t.fx) * (f10 - f00) + t.fx * (f11 - f01));
    }
    if (d_coords) {
      if (!t.clamped_u && t.x1 != t.x0) d_coords[2 * r] += static_cast<Real>(du);
      if (!t.clamped_v && t.y1 != t.y0) d_coords[2 * r + 1] += static_cast<Real>(dv);
    }
  }
}

template <typename Real>
void composite_forward(const Real* sigma, const Real* rgb, const Real* deltas, const Real* background,
                       std::int64_t rays, std::int64_t samples, Real* out, Real* weights) {
  for (std::int64_t r = 0; r < rays; ++r) {
    double color[3] = {0, 0, 0};
    for (std::int64_t i = 0; i < samples; ++i) {
      // T_i as the explicit product over preceding intervals.
      double trans = 1.0;
      for (std::int64_t j = 0; j < i; ++j) trans *= std::exp(-double(sigma[r * samples + j]) * deltas[r * samples + j]);
      const bool last = i == samples - 1;
      const double alpha = last ? 1.0 : 1.0 - std::exp(-double(sigma[r * samples + i]) * deltas[r * samples + i]);
      const double w = trans * alpha;
      for (int ch = 0; ch < 3; ++ch)
        color[ch] += w * (last ? double(background[r * 3 + ch]) : double(rgb[(r * samples + i) * 3 + ch]));
      if (weights) weights[r * samples + i] = static_cast<Real>(w);
    }
    for (int ch = 0; ch < 3; ++ch) out[r * 3 + ch] = static_cast<Real>(color[ch]);
  }
}

template <typename Real>
void composite_backward(const Real* sigma, const Real* rgb, const Real* deltas, const Real* background,
                        std::int64_t rays, std::int64_t samples, const Real* d_out, Real* d_sigma,
                        Real* d_rgb) {
  for (std::int64_t r = 0; r < rays; ++r) {
    auto trans_at = [&](std::int64_t i) {
      double t = 1.0;
      for (std::int64_t j = 0; j < i; ++j) t *= std::exp(-double(sigma[r * samples + j]) * deltas[r * samples + j]);
      return t;
    };
    auto weight_at = [&](std::int64_t i) {
      if (i == samples - 1) return trans_at(i);
      return trans_at(i) * (1.0 - std::exp(-double(sigma[r * samples + i]) * deltas[r * samples + i]));
    };
    auto color_at = [&](std::int64_t i, int ch) {
      return i == samples - 1 ? double(background[r * 3 + ch]) : double(rgb[(r * samples + i) * 3 + ch]);
    };
    for (std::int64_t k = 0; k + 1 < samples; ++k) {
      const double delta = deltas[r * samples + k];
      const double w = weight_at(k);
      if (d_rgb)
        for (int ch = 0; ch < 3; ++ch) d_rgb[(r * samples + k) * 3 + ch] += static_cast<Real>(d_out[r * 3 + ch] * w);
      if (d_sigma) {
        // dC/dsigma_k = delta_k * (T_{k+1} c_k - sum_{i>k} w_i c_i)
        const double t_next = trans_at(k + 1);
        double g = 0;
        for (int ch = 0; ch < 3; ++ch) {
          double behind = 0;
          for (std::int64_t i = k + 1; i < samples; ++i) behind += weight_at(i) * color_at(i, ch);
          g += d_out[r * 3 + ch] * delta * (t_next * color_at(k, ch) - behind);
        }
        d_sigma[r * samples + k] += static_cast<Real>(g);
      }
    }
  }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// parallel
// ---------------------------------------------------------------------------
namespace parallel {
namespace {

template <typename Real>
std::vector<Real> transposed(const Real* src, std::int64_t rows, std::int64_t cols) {
  std::vector<Real> dst(static_cast<std::size_t>(rows * cols));
  constexpr std::int64_t kTile = 32;
#pragma omp parallel for schedule(static)
  for (std::int64_t r0 = 0; r0 < rows; r0 += kTile)
    for (std::int64_t c0 = 0; c0 < cols; c0 += kTile)
      for (std::int64_t r = r0; r < std::min(rows, r0 + kTile); ++r)
        for (std::int64_t c = c0; c < std::min(cols, c0 + kTile); ++c) dst[c * rows + r] = src[r * cols + c];
  return dst;
}

template <typename Real>
struct VecOf;
template <>
struct VecOf<float> {
  typedef float type __attribute__((vector_size(64)));
};
template <>
struct VecOf<double> {
  typedef double type __attribute__((vector_size(64)));
};

// Register tile: kMr rows of C by two 64-byte vectors of columns.
template <typename Real>
struct Tile {
  using Vec = typename VecOf<Real>::type;
  static constexpr int kLanes = static_cast<int>(sizeof(Vec) / sizeof(Real));
  static constexpr int kMr = 8;
  static constexpr int kNr = 2 * kLanes;
  static constexpr std::int64_t kKc = 256;
};

// a_panel: [kc][kMr] packed rows of A; b_panel: [kc][kNr] packed columns of B.
template <typename Real>
inline void micro_kernel(const Real* a_panel, const Real* b_panel, std::int64_t kc, Real* c, std::int64_t ldc,
                         int mr, int nr) {
  using Vec = typename Tile<Real>::Vec;
  constexpr int kMr = Tile<Real>::kMr;
  constexpr int kLanes = Tile<Real>::kLanes;
  Vec acc[kMr][2];
  for (int i = 0; i < kMr; ++i) acc[i][0] = acc[i][1] = Vec{};
  for (std::int64_t p = 0; p < kc; ++p) {
    Vec b0, b1;
    std::memcpy(&b0, b_panel + p * 2 * kLanes, sizeof(Vec));
    std::memcpy(&b1, b_panel + p * 2 * kLanes + kLanes, sizeof(Vec));
    const Real* a = a_panel + p * kMr;
    for (int i = 0; i < kMr; ++i) {
      acc[i][0] += a[i] * b0;
      acc[i][1] += a[i] * b1;
    }
  }
  for (int i = 0; i < mr; ++i)
    for (int j = 0; j < nr; ++j) c[i * ldc + j] += acc[i][j / kLanes][j % kLanes];
}

}  // namespace

template <typename Real>
void gemm(Trans trans_a, Trans trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const Real* a,
          const Real* b, Real* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, Real(0));
  if (m == 0 || n == 0 || k == 0) return;

  std::vector<Real> b_t;
  if (trans_b == Trans::Yes) {
    b_t = transposed(b, n, k);
    b = b_t.data();
  }
  // op(A)[i, p] without materialising the transpose; packing absorbs the stride.
  const std::int64_t a_row_stride = trans_a == Trans::No ? k : 1;
  const std::int64_t a_col_stride = trans_a == Trans::No ? 1 : m;

  if (n <= 4) {
    // Narrow outputs (scalar heads): one dot product per entry.
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        Real acc = 0;
        for (std::int64_t p = 0; p < k; ++p) acc += a[i * a_row_stride + p * a_col_stride] * b[p * n + j];
        c[i * n + j] += acc;
      }
    return;
  }

  constexpr int kMr = Tile<Real>::kMr;
  constexpr int kNr = Tile<Real>::kNr;
  constexpr std::int64_t kKc = Tile<Real>::kKc;
  const std::int64_t panels = (n + kNr - 1) / kNr;
  const std::int64_t row_blocks = (m + kMr - 1) / kMr;
  std::vector<Real> b_packed(static_cast<std::size_t>(panels * kKc * kNr));

  for (std::int64_t k0 = 0; k0 < k; k0 += kKc) {
    const std::int64_t kc = std::min(kKc, k - k0);
#pragma omp parallel for schedule(static)
    for (std::int64_t jp = 0; jp < panels; ++jp) {
      Real* dst = b_packed.data() + jp * kc * kNr;
      const std::int64_t j0 = jp * kNr;
      const std::int64_t nr = std::min<std::int64_t>(kNr, n - j0);
      for (std::int64_t p = 0; p < kc; ++p) {
        const Real* src = b + (k0 + p) * n + j0;
        std::int64_t j = 0;
        for (; j < nr; ++j) dst[p * kNr + j] = src[j];
        for (; j < kNr; ++j) dst[p * kNr + j] = Real(0);
      }
    }

#pragma omp parallel
    {
      std::vector<Real> a_packed(static_cast<std::size_t>(kKc * kMr));
#pragma omp for schedule(static)
      for (std::int64_t ib = 0; ib < row_blocks; ++ib) {
        const std::int64_t i0 = ib * kMr;
        const int mr = static_cast<int>(std::min<std::int64_t>(kMr, m - i0));
        for (std::int64_t p = 0; p < kc; ++p) {
          int i = 0;
          for (; i < mr; ++i) a_packed[p * kMr + i] = a[(i0 + i) * a_row_stride + (k0 + p) * a_col_stride];
          for (; i < kMr; ++i) a_packed[p * kMr + i] = Real(0);
        }
        for (std::int64_t jp = 0; jp < panels; ++jp) {
          const std::int64_t j0 = jp * kNr;
          const int nr = static_cast<int>(std::min<std::int64_t>(kNr, n - j0));
          micro_kernel(a_packed.data(), b_packed.data() + jp * kc * kNr, kc, c + i0 * n + j0, n, mr, nr);
        }
      }
    }
  }
}

template <typename Real>
void im2col3x3(const Real* x, std::int64_t batch, std::int64_t height, std::int64_t width,
               std::int64_t channels, Real* cols) {
  const std::int64_t row_len = 9 * channels;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t y = 0; y < height; ++y)
      for (std::int64_t xx = 0; xx < width; ++xx) {
        Real* row = cols + ((b * height + y) * width + xx) * row_len;
        for (std::int64_t ky = 0; ky < 3; ++ky) {
          const std::int64_t sy = y + ky - 1;
          for (std::int64_t kx = 0; kx < 3; ++kx) {
            const std::int64_t sx = xx + kx - 1;
            Real* dst = row + (ky * 3 + kx) * channels;
            if (sy < 0 || sy >= height || sx < 0 || sx >= width) {
              std::fill(dst, dst + channels, Real(0));
            } else {
              const Real* src = x + ((b * height + sy) * width + sx) * channels;
              std::copy(src, src + channels, dst);
            }
          }
        }
      }
}

template <typename Real>
void col2im3x3(const Real* cols, std::int64_t batch, std::int64_t height, std::int64_t width,
               std::int64_t channels, Real* dx) {
  // Gather form: each output pixel pulls from the 9 patches that cover it.
  const std::int64_t row_len = 9 * channels;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t y = 0; y < height; ++y)
      for (std::int64_t xx = 0; xx < width; ++xx) {
        Real* dst = dx + ((b * height + y) * width + xx) * channels;
        for (std::int64_t ky = 0; ky < 3; ++ky) {
          const std::int64_t py = y - (ky - 1);
          if (py < 0 || py >= height) continue;
          for (std::int64_t kx = 0; kx < 3; ++kx) {
            const std::int64_t px = xx - (kx - 1);
            if (px < 0 || px >= width) continue;
            const Real* src = cols + ((b * height + py) * width + px) * row_len + (ky * 3 + kx) * channels;
            for (std::int64_t ch = 0; ch < channels; ++ch) dst[ch] += src[ch];
          }
        }
      }
}

template <typename Real>
void gather_rows(const Real* table, std::int64_t cols, std::span<const std::int64_t> index, Real* out) {
  const auto rows = static_cast<std::int64_t>(index.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    Real* dst = out + r * cols;
    if (index[r] < 0)
      std::fill(dst, dst + cols, Real(0));
    else
      std::copy(table + index[r] * cols, table + (index[r] + 1) * cols, dst);
  }
}

namespace {
// Splits [0, cols) into per-thread column ranges so scatters stay race-free
// and keep the serial accumulation order within each column.
template <typename Fn>
void for_column_ranges(std::int64_t cols, Fn&& fn) {
#pragma omp parallel
  {
    const std::int64_t nthreads = omp_get_num_threads();
    const std::int64_t tid = omp_get_thread_num();
    const std::int64_t chunk = (cols + nthreads - 1) / nthreads;
    const std::int64_t begin = std::min(cols, tid * chunk);
    const std::int64_t end = std::min(cols, begin + chunk);
    if (begin < end) fn(begin, end);
  }
}
}  // namespace

template <typename Real>
void scatter_add_rows(const Real* d_out, std::int64_t cols, std::span<const std::int64_t> index, Real* d_table) {
  for_column_ranges(cols, [&](std::int64_t c0, std::int64_t c1) {
    for (std::size_t r = 0; r < index.size(); ++r) {
      if (index[r] < 0) continue;
      Real* dst = d_table + index[r] * cols;
      const Real* src = d_out + r * cols;
      for (std::int64_t c = c0; c < c1; ++c) dst[c] += src[c];
    }
  });
}

template <typename Real>
void bilinear_forward(const Real* maps, std::int64_t height, std::int64_t width, std::int64_t depth,
                      const Real* coords, std::span<const std::int64_t> map_of_row, Real* out) {
  const auto rows = static_cast<std::int64_t>(map_of_row.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    Real* dst = out + r * depth;
    if (map_of_row[r] < 0) {
      std::fill(dst, dst + depth, Real(0));
      continue;
    }
    const auto t = bilinear_tap(coords[2 * r], coords[2 * r + 1], height, width);
    const Real* base = maps + map_of_row[r] * height * width * depth;
    const Real* f00 = base + (t.y0 * width + t.x0) * depth;
    const Real* f01 = base + (t.y0 * width + t.x1) * depth;
    const Real* f10 = base + (t.y1 * width + t.x0) * depth;
    const Real* f11 = base + (t.y1 * width + t.x1) * depth;
    const Real w00 = static_cast<Real>((1 - t.fx) * (1 - t.fy)), w01 = static_cast<Real>(t.fx * (1 - t.fy));
    const Real w10 = static_cast<Real>((1 - t.fx) * t.fy), w11 = static_cast<Real>(t.fx * t.fy);
    for (std::int64_t d = 0; d < depth; ++d) dst[d] = w00 * f00[d] + w01 * f01[d] + w10 * f10[d] + w11 * f11[d];
  }
}

template <typename Real>
void bilinear_backward(const Real* maps, std::int64_t height, std::int64_t width, std::int64_t depth,
                       const Real* coords, std::span<const std::int64_t> map_of_row, const Real* d_out,
                       Real* d_maps, Real* d_coords) {
  const auto rows = static_cast<std::int64_t>(map_of_row.size());
  if (d_coords) {
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r) {
      if (map_of_row[r] < 0) continue;
      const auto t = bilinear_tap(coords[2 * r], coords[2 * r + 1], height, width);
      const Real* base = maps + map_of_row[r] * height * width * depth;
      const Real* f00 = base + (t.y0 * width + t.x0) * depth;
      const Real* f01 = base + (t.y0 * width + t.x1) * depth;
      const Real* f10 = base + (t.y1 * width + t.x0) * depth;
      const Real* f11 = base + (t.y1 * width + t.x1) * depth;
      const Real* g = d_out + r * depth;
      Real du = 0, dv = 0;
      const Real fx = static_cast<Real>(t.fx), fy = static_cast<Real>(t.fy);
      for (std::int64_t d = 0; d < depth; ++d) {
        du += g[d] * ((1 - fy) * (f01[d] - f00[d]) + fy * (f11[d] - f10[d]));
        dv += g[d] * ((1 - fx) * (f10[d] - f00[d]) + fx * (f11[d] - f01[d]));
      }
      if (!t.clamped_u && t.x1 != t.x0) d_coords[2 * r] += du;
      if (!t.clamped_v && t.y1 != t.y0) d_coords[2 * r + 1] += dv;
    }
  }
  if (d_maps) {
    std::vector<BilinearTap> taps(static_cast<std::size_t>(rows));
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r)
      if (map_of_row[r] >= 0) taps[r] = bilinear_tap(coords[2 * r], coords[2 * r + 1], height, width);
    for_column_ranges(depth, [&](std::int64_t d0, std::int64_t d1) {
      for (std::int64_t r = 0; r < rows; ++r) {
        if (map_of_row[r] < 0) continue;
        const auto& t = taps[r];
        Real* base = d_maps + map_of_row[r] * height * width * depth;
        Real* f00 = base + (t.y0 * width + t.x0) * depth;
        Real* f01 = base + (t.y0 * width + t.x1) * depth;
        Real* f10 = base + (t.y1 * width + t.x0) * depth;
        Real* f11 = base + (t.y1 * width + t.x1) * depth;
        const Real w00 = static_cast<Real>((1 - t.fx) * (1 - t.fy)), w01 = static_cast<Real>(t.fx * (1 - t.fy));
        const Real w10 = static_cast<Real>((1 - t.fx) * t.fy), w11 = static_cast<Real>(t.fx * t.fy);
        const Real* g = d_out + r * depth;
        for (std::int64_t d = d0; d < d1; ++d) {
          f00[d] += w00 * g[d];
          f01[d] += w01 * g[d];
          f10[d] += w10 * g[d];
          f11[d] += w11 * g[d];
        }
      }
    });
  }
}

template <typename Real>
void composite_forward(const Real* sigma, const Real* rgb, const Real* deltas, const Real* background,
                       std::int64_t rays, std::int64_t samples, Real* out, Real* weights) {
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rays; ++r) {
    const Real* s = sigma + r * samples;
    const Real* dl = deltas + r * samples;
    const Real* c = rgb + r * samples * 3;
    double trans = 1.0;
    double color[3] = {0, 0, 0};
    for (std::int64_t i = 0; i + 1 < samples; ++i) {
      const double keep = std::exp(-double(s[i]) * dl[i]);
      const double w = trans * (1.0 - keep);
      color[0] += w * c[3 * i];
      color[1] += w * c[3 * i + 1];
      color[2] += w * c[3 * i + 2];
      if (weights) weights[r * samples + i] = static_cast<Real>(w);
      trans *= keep;
    }
    for (int ch = 0; ch < 3; ++ch) out[r * 3 + ch] = static_cast<Real>(color[ch] + trans * background[r * 3 + ch]);
    if (weights) weights[r * samples + samples - 1] = static_cast<Real>(trans);
  }
}

template <typename Real>
void composite_backward(const Real* sigma, const Real* rgb, const Real* deltas, const Real* background,
                        std::int64_t rays, std::int64_t samples, const Real* d_out, Real* d_sigma,
                        Real* d_rgb) {
#pragma omp parallel
  {
    std::vector<double> trans(static_cast<std::size_t>(samples + 1));
#pragma omp for schedule(static)
    for (std::int64_t r = 0; r < rays; ++r) {
      const Real* s = sigma + r * samples;
      const Real* dl = deltas + r * samples;
      const Real* c = rgb + r * samples * 3;
      const Real* g = d_out + r * 3;
      trans[0] = 1.0;
      for (std::int64_t i = 0; i + 1 < samples; ++i) trans[i + 1] = trans[i] * std::exp(-double(s[i]) * dl[i]);
      // Suffix colour: background contribution of the terminal sample, then
      // samples are folded in back to front.
      double behind[3];
      for (int ch = 0; ch < 3; ++ch) behind[ch] = trans[samples - 1] * background[r * 3 + ch];
      for (std::int64_t k = samples - 2; k >= 0; --k) {
        const double w = trans[k] - trans[k + 1];
        if (d_rgb)
          for (int ch = 0; ch < 3; ++ch) d_rgb[(r * samples + k) * 3 + ch] += static_cast<Real>(g[ch] * w);
        if (d_sigma) {
          double acc = 0;
          for (int ch = 0; ch < 3; ++ch) acc += g[ch] * (trans[k + 1] * c[3 * k + ch] - behind[ch]);
          d_sigma[r * samples + k] += static_cast<Real>(dl[k] * acc);
        }
        for (int ch = 0; ch < 3; ++ch) behind[ch] += w * c[3 * k + ch];
      }
    }
  }
}

}  // namespace parallel

#define DFRF_INSTANTIATE_KERNELS(NS, Real)                                                                      \
  template void NS::gemm<Real>(Trans, Trans, std::int64_t, std::int64_t, std::int64_t, const Real*, const Real*, \
                               Real*, bool);                                                                     \
  template void NS::im2col3x3<Real>(const Real*, std::int64_t, std::int64_t, std::int64_t, std::int64_t, Real*); \
  template void NS::col2im3x3<Real>(const Real*, std::int64_t, std::int64_t, std::int64_t, std::int64_t, Real*); \
  template void NS::gather_rows<Real>(const Real*, std::int64_t, std::span<const std::int64_t>, Real*);          \
  template void NS::scatter_add_rows<Real>(const Real*, std::int64_t, std::span<const std::int64_t>, Real*);     \
  template void NS::bilinear_forward<Real>(const Real*, std::int64_t, std::int64_t, std::int64_t, const Real*,   \
                                           std::span<const std::int64_t>, Real*);                                \
  template void NS::bilinear_backward<Real>(const Real*, std::int64_t, std::int64_t, std::int64_t, const Real*,  \
                                            std::span<const std::int64_t>, const Real*, Real*, Real*);           \
  template void NS::composite_forward<Real>(const Real*, const Real*, const Real*, const Real*, std::int64_t,    \
                                            std::int64_t, Real*, Real*);                                         \
  template void NS::composite_backward<Real>(const Real*, const Real*, const Real*, const Real*, std::int64_t,   \
                                             std::int64_t, const Real*, Real*, Real*);

DFRF_INSTANTIATE_KERNELS(serial, float)
DFRF_INSTANTIATE_KERNELS(serial, double)
DFRF_INSTANTIATE_KERNELS(parallel, float)
DFRF_INSTANTIATE_KERNELS(parallel, double)

}  // namespace dfrf::kernels
