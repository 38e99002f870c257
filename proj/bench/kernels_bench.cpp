// Serial reference kernels against their OpenMP counterparts at the sizes a
// desk-scale training step uses (1024 rays x 64 samples, 64x64 maps).
//
//   DFRF_THREADS=4 ./build/bench/kernels_bench

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dfrf/diffmath/kernels.hpp"
#include "dfrf/runtime.hpp"

namespace k = dfrf::kernels;

namespace {

std::vector<float> random_values(std::size_t n, float lo, float hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Field-layer product: [rays*samples, 128] x [128, 128].
template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const std::int64_t m = state.range(0), n = 128, kk = 128;
  const auto a = random_values(m * kk, -1, 1, 1), b = random_values(kk * n, -1, 1, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::gemm(k::Trans::No, k::Trans::No, m, n, kk, a.data(), b.data(), c.data(), false);
    else
      k::serial::gemm(k::Trans::No, k::Trans::No, m, n, kk, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * m * n * kk);
}

// Feature extractor patches: 4 references at 64x64 with 64 channels.
template <bool Parallel>
void BM_Im2col(benchmark::State& state) {
  const std::int64_t batch = 4, h = 64, w = 64, ch = 64;
  const auto x = random_values(batch * h * w * ch, -1, 1, 3);
  std::vector<float> cols(batch * h * w * 9 * ch);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::im2col3x3(x.data(), batch, h, w, ch, cols.data());
    else
      k::serial::im2col3x3(x.data(), batch, h, w, ch, cols.data());
    benchmark::DoNotOptimize(cols.data());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(cols.size() * sizeof(float)));
}

template <bool Parallel>
void BM_Col2im(benchmark::State& state) {
  const std::int64_t batch = 4, h = 64, w = 64, ch = 64;
  const auto cols = random_values(batch * h * w * 9 * ch, -1, 1, 4);
  std::vector<float> dx(batch * h * w * ch);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::col2im3x3(cols.data(), batch, h, w, ch, dx.data());
    else
      k::serial::col2im3x3(cols.data(), batch, h, w, ch, dx.data());
    benchmark::DoNotOptimize(dx.data());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(cols.size() * sizeof(float)));
}

struct BilinearCase {
  std::int64_t h = 64, w = 64, depth = 128, rows;
  std::vector<float> maps, coords;
  std::vector<std::int64_t> which;
  explicit BilinearCase(std::int64_t r) : rows(r) {
    maps = random_values(4 * h * w * depth, -1, 1, 5);
    coords = random_values(2 * rows, -2, 65, 6);
    which.resize(rows);
    for (std::int64_t i = 0; i < rows; ++i) which[i] = i % 5 == 0 ? -1 : i % 4;
  }
};

// One (point, reference) lookup per row: 4 references x rays*samples points.
template <bool Parallel>
void BM_BilinearForward(benchmark::State& state) {
  BilinearCase b(state.range(0));
  std::vector<float> out(b.rows * b.depth);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::bilinear_forward(b.maps.data(), b.h, b.w, b.depth, b.coords.data(), b.which, out.data());
    else
      k::serial::bilinear_forward(b.maps.data(), b.h, b.w, b.depth, b.coords.data(), b.which, out.data());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * b.rows);
}

template <bool Parallel>
void BM_BilinearBackward(benchmark::State& state) {
  BilinearCase b(state.range(0));
  const auto d_out = random_values(b.rows * b.depth, -1, 1, 7);
  std::vector<float> d_maps(b.maps.size()), d_coords(2 * b.rows);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::bilinear_backward(b.maps.data(), b.h, b.w, b.depth, b.coords.data(), b.which, d_out.data(),
                                     d_maps.data(), d_coords.data());
    else
      k::serial::bilinear_backward(b.maps.data(), b.h, b.w, b.depth, b.coords.data(), b.which, d_out.data(),
                                   d_maps.data(), d_coords.data());
    benchmark::DoNotOptimize(d_maps.data());
  }
  state.SetItemsProcessed(state.iterations() * b.rows);
}

template <bool Parallel>
void BM_Gather(benchmark::State& state) {
  const std::int64_t rows = state.range(0), cols = 128, table_rows = 4 * 64 * 64;
  const auto table = random_values(table_rows * cols, -1, 1, 8);
  std::vector<std::int64_t> index(rows);
  std::mt19937_64 rng(9);
  for (auto& i : index) i = static_cast<std::int64_t>(rng() % table_rows);
  std::vector<float> out(rows * cols);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::gather_rows(table.data(), cols, index, out.data());
    else
      k::serial::gather_rows(table.data(), cols, index, out.data());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * rows);
}

template <bool Parallel>
void BM_ScatterAdd(benchmark::State& state) {
  const std::int64_t rows = state.range(0), cols = 128, table_rows = 4 * 64 * 64;
  const auto d_out = random_values(rows * cols, -1, 1, 10);
  std::vector<std::int64_t> index(rows);
  std::mt19937_64 rng(11);
  for (auto& i : index) i = static_cast<std::int64_t>(rng() % table_rows);
  std::vector<float> table(table_rows * cols);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::scatter_add_rows(d_out.data(), cols, index, table.data());
    else
      k::serial::scatter_add_rows(d_out.data(), cols, index, table.data());
    benchmark::DoNotOptimize(table.data());
  }
  state.SetItemsProcessed(state.iterations() * rows);
}

struct CompositeCase {
  std::int64_t rays, samples = 64;
  std::vector<float> sigma, rgb, deltas, bg;
  explicit CompositeCase(std::int64_t r) : rays(r) {
    sigma = random_values(rays * samples, 0, 5, 12);
    rgb = random_values(rays * samples * 3, 0, 1, 13);
    deltas = random_values(rays * samples, 0.01f, 0.05f, 14);
    bg = random_values(rays * 3, 0, 1, 15);
  }
};

template <bool Parallel>
void BM_CompositeForward(benchmark::State& state) {
  CompositeCase c(state.range(0));
  std::vector<float> out(c.rays * 3), weights(c.rays * c.samples);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::composite_forward(c.sigma.data(), c.rgb.data(), c.deltas.data(), c.bg.data(), c.rays, c.samples,
                                     out.data(), weights.data());
    else
      k::serial::composite_forward(c.sigma.data(), c.rgb.data(), c.deltas.data(), c.bg.data(), c.rays, c.samples,
                                   out.data(), weights.data());
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * c.rays);
}

template <bool Parallel>
void BM_CompositeBackward(benchmark::State& state) {
  CompositeCase c(state.range(0));
  const auto d_out = random_values(c.rays * 3, -1, 1, 16);
  std::vector<float> d_sigma(c.rays * c.samples), d_rgb(c.rays * c.samples * 3);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::composite_backward(c.sigma.data(), c.rgb.data(), c.deltas.data(), c.bg.data(), c.rays, c.samples,
                                      d_out.data(), d_sigma.data(), d_rgb.data());
    else
      k::serial::composite_backward(c.sigma.data(), c.rgb.data(), c.deltas.data(), c.bg.data(), c.rays, c.samples,
                                    d_out.data(), d_sigma.data(), d_rgb.data());
    benchmark::DoNotOptimize(d_sigma.data());
  }
  state.SetItemsProcessed(state.iterations() * c.rays);
}

}  // namespace

#define DFRF_PAIR(name, ...)                                                  \
  BENCHMARK_TEMPLATE(name, false)->Name(#name "/serial")->__VA_ARGS__;       \
  BENCHMARK_TEMPLATE(name, true)->Name(#name "/parallel")->__VA_ARGS__

DFRF_PAIR(BM_Gemm, Arg(4096)->Arg(65536)->UseRealTime());
DFRF_PAIR(BM_Im2col, UseRealTime());
DFRF_PAIR(BM_Col2im, UseRealTime());
DFRF_PAIR(BM_BilinearForward, Arg(4 * 1024 * 64)->UseRealTime());
DFRF_PAIR(BM_BilinearBackward, Arg(4 * 1024 * 64)->UseRealTime());
DFRF_PAIR(BM_Gather, Arg(4 * 1024 * 64)->UseRealTime());
DFRF_PAIR(BM_ScatterAdd, Arg(4 * 1024 * 64)->UseRealTime());
DFRF_PAIR(BM_CompositeForward, Arg(1024)->Arg(16384)->UseRealTime());
// The serial backward is the quadratic textbook form; one size is plenty.
DFRF_PAIR(BM_CompositeBackward, Arg(1024)->UseRealTime());

int main(int argc, char** argv) {
  dfrf::configure_runtime();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::AddCustomContext("worker_threads", std::to_string(dfrf::worker_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
