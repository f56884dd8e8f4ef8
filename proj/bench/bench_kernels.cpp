// Serial reference kernels against the OpenMP kernels on MNIST-sized layers.
//
//   bench_kernels --benchmark_filter=Dense

#include <benchmark/benchmark.h>

#include <vector>

#include "fedalc/kernels.hpp"
#include "fedalc/rng.hpp"

namespace k = fedalc::kernels;

namespace {

std::vector<double> rand_vec(std::size_t n, std::uint64_t seed) {
  fedalc::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1, 1);
  return v;
}

// MLP first layer: batch 32, 784 -> 128.
constexpr k::DenseDims kDense{32, 784, 128};
// CNN first layer: batch 32, 1x28x28 -> 16x24x24, 5x5 kernel.
constexpr k::ConvDims kConv{32, 1, 28, 28, 16, 5, 1, 0};

template <bool Reference>
void BM_DenseForward(benchmark::State& state) {
  const auto x = rand_vec(kDense.batch * kDense.in, 1), w = rand_vec(kDense.in * kDense.out, 2),
             b = rand_vec(kDense.out, 3);
  std::vector<double> y(kDense.batch * kDense.out);
  for (auto _ : state) {
    if constexpr (Reference) k::reference::dense_forward(x, w, b, y, kDense);
    else k::dense_forward(x, w, b, y, kDense);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * kDense.batch * kDense.in * kDense.out);
}

template <bool Reference>
void BM_DenseBackward(benchmark::State& state) {
  const auto x = rand_vec(kDense.batch * kDense.in, 1), w = rand_vec(kDense.in * kDense.out, 2),
             gy = rand_vec(kDense.batch * kDense.out, 3);
  std::vector<double> gx(x.size()), gw(w.size()), gb(kDense.out);
  for (auto _ : state) {
    if constexpr (Reference) k::reference::dense_backward(x, w, gy, gx, gw, gb, kDense);
    else k::dense_backward(x, w, gy, gx, gw, gb, kDense);
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * 4 * kDense.batch * kDense.in * kDense.out);
}

template <bool Reference>
void BM_ConvForward(benchmark::State& state) {
  const auto x = rand_vec(kConv.batch * kConv.in_ch * kConv.height * kConv.width, 1);
  const auto w = rand_vec(kConv.out_ch * kConv.in_ch * kConv.kernel * kConv.kernel, 2), b = rand_vec(kConv.out_ch, 3);
  std::vector<double> y(kConv.batch * kConv.out_ch * kConv.out_h() * kConv.out_w());
  for (auto _ : state) {
    if constexpr (Reference) k::reference::conv2d_forward(x, w, b, y, kConv);
    else k::conv2d_forward(x, w, b, y, kConv);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * y.size() * kConv.in_ch * kConv.kernel * kConv.kernel);
}

template <bool Reference>
void BM_ConvBackward(benchmark::State& state) {
  const auto x = rand_vec(kConv.batch * kConv.in_ch * kConv.height * kConv.width, 1);
  const auto w = rand_vec(kConv.out_ch * kConv.in_ch * kConv.kernel * kConv.kernel, 2);
  const auto gy = rand_vec(kConv.batch * kConv.out_ch * kConv.out_h() * kConv.out_w(), 3);
  std::vector<double> gx(x.size()), gw(w.size()), gb(kConv.out_ch);
  for (auto _ : state) {
    if constexpr (Reference) k::reference::conv2d_backward(x, w, gy, gx, gw, gb, kConv);
    else k::conv2d_backward(x, w, gy, gx, gw, gb, kConv);
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * 4 * gy.size() * kConv.in_ch * kConv.kernel * kConv.kernel);
}

template <bool Reference>
void BM_MaxPool(benchmark::State& state) {
  const k::PoolDims d{32, 16, 24, 24, 2, 2};
  const auto x = rand_vec(d.batch * d.channels * d.height * d.width, 1);
  std::vector<double> y(d.batch * d.channels * d.out_h() * d.out_w());
  std::vector<std::size_t> am(y.size());
  for (auto _ : state) {
    if constexpr (Reference) k::reference::maxpool_forward(x, y, am, d);
    else k::maxpool_forward(x, y, am, d);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_DenseForward<true>)->Name("DenseForward/reference");
BENCHMARK(BM_DenseForward<false>)->Name("DenseForward/openmp");
BENCHMARK(BM_DenseBackward<true>)->Name("DenseBackward/reference");
BENCHMARK(BM_DenseBackward<false>)->Name("DenseBackward/openmp");
BENCHMARK(BM_ConvForward<true>)->Name("ConvForward/reference");
BENCHMARK(BM_ConvForward<false>)->Name("ConvForward/openmp");
BENCHMARK(BM_ConvBackward<true>)->Name("ConvBackward/reference");
BENCHMARK(BM_ConvBackward<false>)->Name("ConvBackward/openmp");
BENCHMARK(BM_MaxPool<true>)->Name("MaxPool/reference");
BENCHMARK(BM_MaxPool<false>)->Name("MaxPool/openmp");

BENCHMARK_MAIN();
