#include <benchmark/benchmark.h>

#include "fedlev/leverage.hpp"
#include "fedlev/synthgen.hpp"

namespace {

fedlev::SynthDataset bench_data(std::size_t d, std::size_t per_type) {
  fedlev::SynthParams p;
  p.d = d;
  p.peaks_per_type = d / 50;
  p.shared_peaks = d / 20;
  p.depth_mean = 0.03 * static_cast<double>(d);
  p.type_counts.assign(5, per_type);
  p.seed = 1;
  return fedlev::generate(p);
}

void BM_ExactLeverage(benchmark::State& state) {
  const auto data = bench_data(static_cast<std::size_t>(state.range(0)), 40);
  for (auto _ : state) benchmark::DoNotOptimize(fedlev::exact_column_leverage(data.matrix));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ExactLeverage)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_SketchedLeverage(benchmark::State& state) {
  const auto data = bench_data(static_cast<std::size_t>(state.range(0)), 40);
  for (auto _ : state) benchmark::DoNotOptimize(fedlev::approx_column_leverage(data.matrix, 64, 3));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SketchedLeverage)->Arg(1000)->Arg(4000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_SampleWithoutReplacement(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto p = fedlev::uniform_probabilities(d);
  for (auto _ : state) benchmark::DoNotOptimize(fedlev::sample_without_replacement(p, d / 5, 9));
}
BENCHMARK(BM_SampleWithoutReplacement)->Arg(10000)->Arg(100000);

}  // namespace
