#include <benchmark/benchmark.h>

#include <random>

#include "plcgrid/nn.hpp"

namespace {

using plcgrid::nn::Tensor;

Tensor random_tensor(plcgrid::nn::Shape shape) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = n(rng);
  return t;
}

// A batch of edge spectra through one dilated convolution.
void conv1d_forward(benchmark::State& state) {
  plcgrid::nn::Conv1d conv(1, 8, 5, static_cast<std::size_t>(state.range(0)));
  conv.initialize(1);
  const auto x = random_tensor({16, 1, 917});
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x));
}
BENCHMARK(conv1d_forward)->Arg(1)->Arg(4);

void conv1d_backward(benchmark::State& state) {
  plcgrid::nn::Conv1d conv(1, 8, 5, static_cast<std::size_t>(state.range(0)));
  conv.initialize(1);
  const auto x = random_tensor({16, 1, 917});
  const auto y = conv.forward(x);
  const auto g = random_tensor(y.shape);
  for (auto _ : state) benchmark::DoNotOptimize(conv.backward(g));
}
BENCHMARK(conv1d_backward)->Arg(1)->Arg(4);

}  // namespace
