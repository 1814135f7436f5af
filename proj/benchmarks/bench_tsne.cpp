#include <benchmark/benchmark.h>

#include <random>

#include "plcgrid/embed.hpp"

namespace {

using plcgrid::embed::Matrix;

Matrix gaussian(std::size_t rows, std::size_t cols) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  Matrix m(rows, cols);
  for (auto& v : m.data) v = n(rng);
  return m;
}

void tsne_embed(benchmark::State& state) {
  const auto x = gaussian(static_cast<std::size_t>(state.range(0)), 50);
  plcgrid::embed::TsneParams p;
  p.perplexity = 10;
  p.iters = 200;
  p.exaggeration_iters = 50;
  for (auto _ : state) benchmark::DoNotOptimize(plcgrid::embed::tsne(x, p));
}
BENCHMARK(tsne_embed)->Arg(100)->Arg(200)->Arg(400)->Unit(benchmark::kMillisecond);

void pca_917(benchmark::State& state) {
  const auto x = gaussian(static_cast<std::size_t>(state.range(0)), 917);
  for (auto _ : state) benchmark::DoNotOptimize(plcgrid::embed::pca(x, 50));
}
BENCHMARK(pca_917)->Arg(500)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace
