#include <benchmark/benchmark.h>

#include <numeric>

#include "fedlev/synthgen.hpp"
#include "fedlev/vae.hpp"

namespace {

struct Setup {
  fedlev::VaeConfig config;
  fedlev::TrainingData data;
};

Setup make_setup(std::size_t s) {
  fedlev::SynthParams p;
  p.d = 2000;
  p.peaks_per_type = 40;
  p.shared_peaks = 100;
  p.depth_mean = 600;
  p.type_counts.assign(5, 100);
  p.seed = 2;
  const auto synth = fedlev::generate(p);
  fedlev::ClientShard shard;
  shard.matrix = synth.matrix;
  shard.cells = synth.cells;
  std::vector<fedlev::SparseBinaryMatrix::Index> selected(s);
  std::iota(selected.begin(), selected.end(), 0);
  const auto enc = fedlev::ConfounderEncoder::from_moments(
      std::vector<fedlev::DepthMoments>{fedlev::depth_moments(shard.cells)}, 1);
  Setup out;
  out.data = fedlev::make_training_data(shard, selected, Eigen::VectorXd(), enc);
  out.config = fedlev::make_vae_config(fedlev::VaeArch{}, fedlev::block_sizes_for_selection(selected, p.d, 20),
                                       enc.dim(), 1.0);
  return out;
}

void BM_LocalTrainStep(benchmark::State& state) {
  const auto setup = make_setup(static_cast<std::size_t>(state.range(0)));
  const auto start = fedlev::init_params(setup.config, 4);
  fedlev::LocalTrainOptions opt;
  opt.steps = 1;
  opt.batch_size = 64;
  opt.learning_rate = 1e-3;
  for (auto _ : state) benchmark::DoNotOptimize(fedlev::local_train(start, setup.data, opt));
}
BENCHMARK(BM_LocalTrainStep)->Arg(400)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_Embed(benchmark::State& state) {
  const auto setup = make_setup(static_cast<std::size_t>(state.range(0)));
  const auto params = fedlev::init_params(setup.config, 4);
  for (auto _ : state) benchmark::DoNotOptimize(fedlev::embed(params, setup.data));
}
BENCHMARK(BM_Embed)->Arg(400)->Arg(2000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
