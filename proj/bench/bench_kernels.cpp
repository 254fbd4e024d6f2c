// Parallel kernels vs the serial reference on network-sized layers.
#include <benchmark/benchmark.h>

#include <random>

#include "cmr/kernels.hpp"
#include "cmr/reference_kernels.hpp"

namespace {

cmr::Tensor random_tensor(cmr::Shape4 shape, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  cmr::Tensor t(shape);
  for (float& v : t.values()) v = dist(rng);
  return t;
}

cmr::ConvLayerParams random_conv(std::size_t in, std::size_t out, std::size_t dilation) {
  cmr::ConvLayerParams p;
  p.weights = random_tensor({out, in, 3, 3}, 7);
  p.bias.assign(out, 0.1f);
  p.dilation = dilation;
  return p;
}

// args: width, input extent, dilation
void BM_ConvForward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto extent = static_cast<std::size_t>(state.range(1));
  const auto p = random_conv(width, width, static_cast<std::size_t>(state.range(2)));
  const auto x = random_tensor({1, width, extent, extent}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(cmr::kernels::conv2d_forward(x, p));
  const double out = static_cast<double>(extent - 2 * p.dilation);
  state.counters["MAC/s"] = benchmark::Counter(out * out * 9.0 * width * width, benchmark::Counter::kIsIterationInvariantRate);
}

void BM_ConvForwardReference(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto extent = static_cast<std::size_t>(state.range(1));
  const auto p = random_conv(width, width, static_cast<std::size_t>(state.range(2)));
  const auto x = random_tensor({1, width, extent, extent}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(cmr::reference::conv2d_forward(x, p));
  const double out = static_cast<double>(extent - 2 * p.dilation);
  state.counters["MAC/s"] = benchmark::Counter(out * out * 9.0 * width * width, benchmark::Counter::kIsIterationInvariantRate);
}

void BM_ConvBackward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto extent = static_cast<std::size_t>(state.range(1));
  const auto p = random_conv(width, width, static_cast<std::size_t>(state.range(2)));
  const auto x = random_tensor({1, width, extent, extent}, 3);
  const std::size_t out = extent - 2 * p.dilation;
  const auto g = random_tensor({1, width, out, out}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(cmr::kernels::conv2d_backward(x, p, g));
  state.counters["MAC/s"] = benchmark::Counter(2.0 * out * out * 9.0 * width * width, benchmark::Counter::kIsIterationInvariantRate);
}

void BM_ConvBackwardReference(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto extent = static_cast<std::size_t>(state.range(1));
  const auto p = random_conv(width, width, static_cast<std::size_t>(state.range(2)));
  const auto x = random_tensor({1, width, extent, extent}, 3);
  const std::size_t out = extent - 2 * p.dilation;
  const auto g = random_tensor({1, width, out, out}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(cmr::reference::conv2d_backward(x, p, g));
  state.counters["MAC/s"] = benchmark::Counter(2.0 * out * out * 9.0 * width * width, benchmark::Counter::kIsIterationInvariantRate);
}

void BM_BatchNormTrain(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto extent = static_cast<std::size_t>(state.range(1));
  const auto x = random_tensor({4, width, extent, extent}, 3);
  cmr::BatchNormParams p(width);
  for (auto _ : state) benchmark::DoNotOptimize(cmr::kernels::batchnorm_forward(x, p, cmr::BatchNormMode::kTrain));
}

}  // namespace

BENCHMARK(BM_ConvForward)->Args({16, 194, 1})->Args({16, 194, 8})->Args({32, 128, 2})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForwardReference)->Args({16, 194, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward)->Args({16, 194, 1})->Args({16, 194, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardReference)->Args({16, 64, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchNormTrain)->Args({16, 192})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
namespace {
void BM_ConvBackwardWeightsOnly(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto extent = static_cast<std::size_t>(state.range(1));
  const auto p = random_conv(width, width, static_cast<std::size_t>(state.range(2)));
  const auto x = random_tensor({1, width, extent, extent}, 3);
  const std::size_t out = extent - 2 * p.dilation;
  const auto g = random_tensor({1, width, out, out}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(cmr::kernels::conv2d_backward(x, p, g, false));
  state.counters["MAC/s"] = benchmark::Counter(out * out * 9.0 * width * width, benchmark::Counter::kIsIterationInvariantRate);
}
}
BENCHMARK(BM_ConvBackwardWeightsOnly)->Args({16, 194, 1})->Args({16, 194, 8})->Unit(benchmark::kMillisecond);
