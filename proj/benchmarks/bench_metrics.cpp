#include <benchmark/benchmark.h>

#include "dialprobe/rng.hpp"
#include "dialprobe/textmetrics.hpp"

using namespace dialprobe;

namespace {

std::vector<TokenSeq> random_corpus(int sentences, int len, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenSeq> out;
  for (int i = 0; i < sentences; ++i) {
    TokenSeq s;
    for (int t = 0; t < len; ++t) s.push_back("tok" + std::to_string(rng.uniform_int(0, 499)));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

static void BM_CorpusBleu2(benchmark::State& state) {
  int sentences = static_cast<int>(state.range(0));
  auto candidates = random_corpus(sentences, 15, 1);
  auto references = random_corpus(sentences, 15, 2);
  for (auto _ : state) {
    auto report = bleu2(candidates, references);
    benchmark::DoNotOptimize(report.score);
  }
  state.SetItemsProcessed(state.iterations() * sentences);
}
BENCHMARK(BM_CorpusBleu2)->Arg(500)->Arg(5000);

static void BM_MicroF1Sets(benchmark::State& state) {
  Rng rng(3);
  std::vector<std::vector<int>> preds, golds;
  for (int i = 0; i < 5000; ++i) {
    std::vector<int> p, g;
    for (int k = 0; k < 4; ++k) {
      p.push_back(static_cast<int>(rng.uniform_int(0, 40)));
      g.push_back(static_cast<int>(rng.uniform_int(0, 40)));
    }
    preds.push_back(std::move(p));
    golds.push_back(std::move(g));
  }
  for (auto _ : state) {
    auto report = micro_f1_sets(preds, golds);
    benchmark::DoNotOptimize(report.f1);
  }
}
BENCHMARK(BM_MicroF1Sets);
