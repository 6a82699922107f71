// Reference vs OpenMP convolution kernels on layer geometries from the
// classifier and detector backbones. Run with --benchmark_filter to pick a
// layer; OMP_NUM_THREADS controls the parallel variants.
#include <benchmark/benchmark.h>

#include <vector>

#include "npdet/kernels.hpp"
#include "npdet/rng.hpp"

namespace {

using npdet::kernels::Conv2dShape;

struct Layer {
  const char* name;
  std::size_t in_c, size, out_c, k, stride, pad;
};

// batch 1 except where the input is small enough to batch
constexpr Layer kLayers[] = {
    {"classifier_conv1", 3, 224, 32, 5, 1, 0},
    {"classifier_conv4", 64, 102, 64, 5, 1, 0},
    {"classifier_conv7", 96, 47, 128, 5, 1, 0},
    {"backbone_stem", 3, 224, 16, 3, 2, 1},
    {"backbone_stage2", 32, 56, 64, 3, 2, 1},
    {"desk_conv2", 8, 60, 8, 5, 1, 0},
};

struct Buffers {
  Conv2dShape shape;
  std::vector<double> input, kernel, bias, output;
};

Buffers make(const Layer& l, std::size_t batch) {
  Buffers b;
  b.shape = Conv2dShape::make(batch, l.in_c, l.size, l.size, l.out_c, l.k, l.k, l.stride, l.pad);
  npdet::Rng rng(1);
  b.input.resize(b.shape.input_size());
  b.kernel.resize(b.shape.kernel_size());
  b.bias.resize(l.out_c);
  b.output.resize(b.shape.output_size());
  for (auto& v : b.input) v = rng.uniform(-1, 1);
  for (auto& v : b.kernel) v = rng.uniform(-1, 1);
  for (auto& v : b.bias) v = rng.uniform(-1, 1);
  return b;
}

template <bool Parallel>
void BM_Forward(benchmark::State& state) {
  const Layer& l = kLayers[state.range(0)];
  Buffers b = make(l, 1);
  for (auto _ : state) {
    if constexpr (Parallel) {
      npdet::kernels::conv2d_forward(b.shape, b.input, b.kernel, b.bias, b.output);
    } else {
      npdet::kernels::reference::conv2d_forward(b.shape, b.input, b.kernel, b.bias, b.output);
    }
    benchmark::DoNotOptimize(b.output.data());
  }
  state.SetLabel(l.name);
  state.counters["MAC/s"] = benchmark::Counter(
      static_cast<double>(b.shape.output_size() * l.in_c * l.k * l.k), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void BM_BackwardInput(benchmark::State& state) {
  const Layer& l = kLayers[state.range(0)];
  Buffers b = make(l, 1);
  std::vector<double> grad_in(b.shape.input_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      npdet::kernels::conv2d_backward_input(b.shape, b.output, b.kernel, grad_in);
    } else {
      npdet::kernels::reference::conv2d_backward_input(b.shape, b.output, b.kernel, grad_in);
    }
    benchmark::DoNotOptimize(grad_in.data());
  }
  state.SetLabel(l.name);
}

template <bool Parallel>
void BM_BackwardKernel(benchmark::State& state) {
  const Layer& l = kLayers[state.range(0)];
  Buffers b = make(l, 1);
  std::vector<double> grad_k(b.shape.kernel_size());
  std::vector<double> grad_b(l.out_c);
  for (auto _ : state) {
    if constexpr (Parallel) {
      npdet::kernels::conv2d_backward_kernel(b.shape, b.input, b.output, grad_k, grad_b);
    } else {
      npdet::kernels::reference::conv2d_backward_kernel(b.shape, b.input, b.output, grad_k, grad_b);
    }
    benchmark::DoNotOptimize(grad_k.data());
  }
  state.SetLabel(l.name);
}

constexpr int kLayerCount = static_cast<int>(sizeof(kLayers) / sizeof(kLayers[0]));

}  // namespace

BENCHMARK(BM_Forward<false>)->Name("forward/reference")->DenseRange(0, kLayerCount - 1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Forward<true>)->Name("forward/parallel")->DenseRange(0, kLayerCount - 1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardInput<false>)
    ->Name("backward_input/reference")
    ->DenseRange(0, kLayerCount - 1)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardInput<true>)
    ->Name("backward_input/parallel")
    ->DenseRange(0, kLayerCount - 1)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardKernel<false>)
    ->Name("backward_kernel/reference")
    ->DenseRange(0, kLayerCount - 1)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardKernel<true>)
    ->Name("backward_kernel/parallel")
    ->DenseRange(0, kLayerCount - 1)
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
