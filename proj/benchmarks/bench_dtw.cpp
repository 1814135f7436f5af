#include <benchmark/benchmark.h>

#include <random>

#include "plcgrid/stateseq.hpp"

namespace {

std::vector<int> random_symbols(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, 5);
  std::vector<int> out(n);
  for (auto& v : out) v = pick(rng);
  return out;
}

// One anomaly window (a day of slots) against one template.
void dtw_full(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_symbols(n, 1), b = random_symbols(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(plcgrid::stateseq::dtw(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(dtw_full)->RangeMultiplier(2)->Range(24, 384)->Complexity();

void dtw_cost_only(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_symbols(n, 1), b = random_symbols(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(plcgrid::stateseq::dtw_cost(a, b));
}
BENCHMARK(dtw_cost_only)->RangeMultiplier(2)->Range(24, 384);

// Early abandoning against a tight bound, as the template search uses it.
void dtw_cost_abandoned(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_symbols(n, 1), b = random_symbols(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(plcgrid::stateseq::dtw_cost(a, b, {}, 2.0));
}
BENCHMARK(dtw_cost_abandoned)->RangeMultiplier(2)->Range(24, 384);

}  // namespace
