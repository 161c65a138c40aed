#include <benchmark/benchmark.h>

#include "avemo/bundle.hpp"
#include "avemo/eval.hpp"
#include "avemo/rng.hpp"

using namespace avemo;

namespace {

void BM_MatmulBackward(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor a = rng.gaussian_tensor({n, n}, 1.0);
  Tensor b = rng.gaussian_tensor({n, n}, 1.0);
  for (auto _ : state) {
    Tape tape;
    Var va = tape.leaf(a, true);
    Var vb = tape.leaf(b, true);
    Var loss = tape.sum_sq(tape.matmul(va, vb));
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(va).data.data());
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(32)->Arg(64);

void BM_ClipForward(benchmark::State& state) {
  WorldConfig wc;
  World world = World::generate(wc, wc.seed);
  BundleConfig bc = BundleConfig::defaults(wc);
  bc.seed = 3;
  ModelBundle m = ModelBundle::build(bc);
  Rng rng(2);
  ClipSample clip = world.paired_clip(rng, 0);
  for (auto _ : state) {
    Tape tape;
    ParamCtx ctx(tape);
    Var z = m.tokens(ctx, Modality::Video, &clip.video, nullptr);
    PromptLayout lay =
        m.make_layout(Modality::Video, clip.instruction, clip.answer);
    benchmark::DoNotOptimize(m.lm().forward(ctx, lay, z).val().data.data());
  }
}
BENCHMARK(BM_ClipForward);

void BM_AnswerMcq(benchmark::State& state) {
  WorldConfig wc;
  World world = World::generate(wc, wc.seed);
  BundleConfig bc = BundleConfig::defaults(wc);
  bc.seed = 3;
  ModelBundle m = ModelBundle::build(bc);
  auto items = world.build_benchmark(12, 5);
  size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(answer_mcq(m, items[i % items.size()]));
    ++i;
  }
}
BENCHMARK(BM_AnswerMcq);

void BM_ClipGeneration(benchmark::State& state) {
  WorldConfig wc;
  World world = World::generate(wc, wc.seed);
  Rng rng(7);
  long long id = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(world.paired_clip(rng, id++).audio.data.data());
  }
}
BENCHMARK(BM_ClipGeneration);

}  // namespace

BENCHMARK_MAIN();
