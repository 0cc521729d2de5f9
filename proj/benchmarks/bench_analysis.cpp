#include <benchmark/benchmark.h>

#include "dialprobe/analysis.hpp"
#include "dialprobe/rng.hpp"

using namespace dialprobe;

static void BM_Pca2(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  int d = static_cast<int>(state.range(1));
  Rng rng(4);
  std::vector<double> data(static_cast<std::size_t>(n) * d);
  for (auto& v : data) v = rng.normal();
  for (auto _ : state) {
    auto proj = pca2(data, n, d, "bench");
    benchmark::DoNotOptimize(proj.variance_ratio1);
  }
}
BENCHMARK(BM_Pca2)->Args({2000, 64})->Args({2000, 256});

static void BM_BootstrapTies(benchmark::State& state) {
  Rng rng(5);
  std::vector<Annotation> annotations;
  for (int r = 0; r < 2000; ++r)
    for (int a = 0; a < 3; ++a)
      annotations.push_back({"r" + std::to_string(r), rng.bernoulli(0.35) ? "tie" : "a"});
  int sets = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto dist = bootstrap_ties(annotations, sets, 200, 9);
    benchmark::DoNotOptimize(dist.mean);
  }
  state.SetItemsProcessed(state.iterations() * sets);
}
BENCHMARK(BM_BootstrapTies)->Arg(1000)->Arg(10000);
