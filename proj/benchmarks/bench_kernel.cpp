#include <benchmark/benchmark.h>

#include "dialprobe/gradkernel.hpp"
#include "dialprobe/models.hpp"

using namespace dialprobe;

static void BM_MatmulForwardBackward(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(1);
  gk::Buffer<float> a(n, n), b(n, n);
  gk::init_dense(a, n, rng);
  gk::init_dense(b, n, rng);
  for (auto _ : state) {
    gk::TapeF tape;
    auto loss = tape.sum_all(tape.matmul(tape.leaf(a), tape.leaf(b)));
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.scalar(loss));
  }
  state.SetItemsProcessed(state.iterations() * 2 * static_cast<std::int64_t>(n) * n * n);
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(64)->Arg(128)->Arg(256);

static void BM_LstmAttnTrainStep(benchmark::State& state) {
  int batch = static_cast<int>(state.range(0));
  Model model(ModelConfig::desk_scale(ModelKind::LstmAttn, 600, 1));
  Rng rng(2);
  std::vector<EncodedExample> examples;
  for (int b = 0; b < batch; ++b) {
    EncodedExample ex;
    for (int t = 0; t < 60; ++t)
      ex.context_ids.push_back(static_cast<int>(rng.uniform_int(4, 599)));
    for (int t = 0; t < 10; ++t)
      ex.target_ids.push_back(static_cast<int>(rng.uniform_int(4, 599)));
    examples.push_back(std::move(ex));
  }
  std::vector<gk::AdamState<float>> adam(model.params().size());
  for (auto _ : state) {
    gk::TapeF tape;
    auto [loss, tokens] = model.batch_loss(tape, examples);
    tape.backward(loss);
    for (std::size_t p = 0; p < model.params().size(); ++p)
      gk::adam_step(model.params()[p].second, adam[p], 0.004f);
    benchmark::DoNotOptimize(tokens);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_LstmAttnTrainStep)->Arg(8)->Arg(32);

static void BM_EncodeContext(benchmark::State& state) {
  Model model(ModelConfig::desk_scale(ModelKind::Lstm, 600, 1));
  Rng rng(3);
  std::vector<int> ids;
  for (int t = 0; t < 100; ++t) ids.push_back(static_cast<int>(rng.uniform_int(4, 599)));
  for (auto _ : state) {
    auto vec = model.encode(ids, {});
    benchmark::DoNotOptimize(vec);
  }
}
BENCHMARK(BM_EncodeContext);
