// Serial vs OpenMP kernels at the pre-training shapes (B = 256, K = 4096).
// The second benchmark argument is 0 for serial, 1 for OpenMP.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>
#include <vector>

#include "cssloc/encoder.hpp"
#include "cssloc/kernels.hpp"

using namespace cssloc;
using kernels::Backend;

namespace {

std::vector<float> noise(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Backend backend(const benchmark::State& st) { return st.range(1) ? Backend::omp : Backend::serial; }

void label(benchmark::State& st) {
  st.SetLabel(st.range(1) ? "omp x" + std::to_string(omp_get_max_threads()) : "serial");
}

kernels::ConvDims conv_dims(const benchmark::State& st) {
  // range(0) picks the layer: 0 -> 30x30 1->4, 1 -> 15x15 4->4
  kernels::ConvDims d;
  d.batch = 256;
  d.in_channels = st.range(0) ? 4 : 1;
  d.out_channels = 4;
  d.height = d.width = st.range(0) ? 15 : 30;
  return d;
}

void BM_ConvForward(benchmark::State& st) {
  const auto d = conv_dims(st);
  const auto x = noise(d.batch * d.in_channels * d.height * d.width, 1);
  const auto w = noise(d.out_channels * d.in_channels * 9, 2), b = noise(d.out_channels, 3);
  std::vector<float> y(d.batch * d.out_channels * d.height * d.width);
  for (auto _ : st) {
    kernels::conv2d_forward<float>(backend(st), d, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  label(st);
}

void BM_ConvBackward(benchmark::State& st) {
  const auto d = conv_dims(st);
  const auto x = noise(d.batch * d.in_channels * d.height * d.width, 1);
  const auto w = noise(d.out_channels * d.in_channels * 9, 2);
  const auto dy = noise(d.batch * d.out_channels * d.height * d.width, 4);
  std::vector<float> dx(x.size()), dw(w.size()), db(d.out_channels);
  for (auto _ : st) {
    kernels::conv2d_backward_input<float>(backend(st), d, dy, w, dx);
    kernels::conv2d_backward_params<float>(backend(st), d, dy, x, dw, db);
    benchmark::DoNotOptimize(dx.data());
    benchmark::DoNotOptimize(dw.data());
  }
  label(st);
}

void BM_MaxPool(benchmark::State& st) {
  kernels::PoolDims d;
  d.planes = 256 * 4;
  d.height = d.width = 30;
  d.window = 2;
  const auto x = noise(d.planes * d.height * d.width, 5);
  std::vector<float> y(d.planes * d.out_height() * d.out_width());
  std::vector<std::size_t> arg(y.size());
  for (auto _ : st) {
    kernels::maxpool_forward<float>(backend(st), d, x, y, arg);
    benchmark::DoNotOptimize(y.data());
  }
  label(st);
}

void BM_Linear(benchmark::State& st) {
  kernels::LinearDims d{256, 100, 100};
  const auto x = noise(d.batch * d.in, 6), w = noise(d.out * d.in, 7), b = noise(d.out, 8);
  std::vector<float> y(d.batch * d.out);
  for (auto _ : st) {
    kernels::linear_forward<float>(backend(st), d, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  label(st);
}

// Query-vs-queue similarities, the bulk of the InfoNCE cost.
void BM_Gram(benchmark::State& st) {
  const std::size_t n = 256, k = 4096, dim = 32;
  const auto a = noise(n * dim, 9), b = noise(k * dim, 10);
  std::vector<float> s(n * k);
  for (auto _ : st) {
    kernels::gram<float>(backend(st), n, k, dim, a, b, s);
    benchmark::DoNotOptimize(s.data());
  }
  label(st);
}

void BM_EncodeBatch(benchmark::State& st) {
  const auto enc = EncoderState<float>::random(1);
  Tensor<float> x({256, 1, 30, 30}, noise(256 * 900, 11));
  for (auto _ : st) {
    auto out = encode_batch(enc, x, backend(st));
    benchmark::DoNotOptimize(out.second.data().data());
  }
  st.SetItemsProcessed(st.iterations() * 256);
  label(st);
}

}  // namespace

BENCHMARK(BM_ConvForward)->ArgsProduct({{0, 1}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward)->ArgsProduct({{0, 1}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaxPool)->ArgsProduct({{0}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Linear)->ArgsProduct({{0}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gram)->ArgsProduct({{0}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EncodeBatch)->ArgsProduct({{0}, {0, 1}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
