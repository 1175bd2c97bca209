#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fssda/distill.hpp"
#include "fssda/experiment.hpp"
#include "fssda/federation.hpp"
#include "fssda/model.hpp"

namespace {

using namespace fssda;

ParamVector gaussian(const ModelSpec& spec, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  ParamVector p(spec);
  for (double& v : p.values()) v = n(rng);
  return p;
}

Batch random_batch(Rng& rng, std::size_t rows, std::size_t dim, std::size_t classes) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> cls(0, classes - 1);
  Batch b{Matrix(rows, dim), Matrix(rows, classes)};
  for (double& v : b.features.values()) v = n(rng);
  for (std::size_t r = 0; r < rows; ++r) b.targets(r, cls(rng)) = 1.0;
  return b;
}

// Full-batch gradient on one device-sized shard; arg 0 is the hidden width.
void BM_Gradient(benchmark::State& state) {
  Rng rng(1);
  const ModelSpec spec{64, static_cast<std::size_t>(state.range(0)), 8};
  const ParamVector p = gaussian(spec, rng);
  const Batch b = random_batch(rng, 200, 64, 8);
  for (auto _ : state) benchmark::DoNotOptimize(grad(p, b, 2.0));
  state.SetItemsProcessed(state.iterations() * 200);
}
BENCHMARK(BM_Gradient)->Arg(0)->Arg(32);

void BM_AdaptiveLambda(benchmark::State& state) {
  Rng rng(2);
  const ModelSpec spec{64, 0, 8};
  const ParamVector h = gaussian(spec, rng), s = gaussian(spec, rng);
  for (auto _ : state) benchmark::DoNotOptimize(adaptive_lambda(h, s));
}
BENCHMARK(BM_AdaptiveLambda);

// Min-norm weights over one hard-label gradient plus arg 0 source gradients.
void BM_FrankWolfe(benchmark::State& state) {
  Rng rng(3);
  const ModelSpec spec{64, 0, 8};
  std::vector<ParamVector> gs;
  for (int j = 0; j <= state.range(0); ++j) gs.push_back(gaussian(spec, rng));
  for (auto _ : state) benchmark::DoNotOptimize(frank_wolfe_simplex(gs));
}
BENCHMARK(BM_FrankWolfe)->Arg(1)->Arg(2)->Arg(4);

// One parallel FSSDA round on the default benchmark; arg 0 is the worker count.
void BM_FssdaRound(benchmark::State& state) {
  const ExperimentConfig cfg = ExperimentConfig::defaults();
  FederationConfig c = cfg.federation;
  c.model = ModelSpec{cfg.benchmark.feature_dim, 0, cfg.benchmark.num_classes};
  c.rounds = 1;
  c.threads = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    state.PauseTiming();
    Federation fed = make_federation(cfg.benchmark, cfg.pair("small"), 0.1, c.num_devices, 1);
    state.ResumeTiming();
    benchmark::DoNotOptimize(run_fssda(c, fed));
  }
}
BENCHMARK(BM_FssdaRound)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
