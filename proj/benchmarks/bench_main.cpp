#include <benchmark/benchmark.h>

#include "skelfuse/ops.hpp"
#include "skelfuse/rgb_net.hpp"
#include "skelfuse/stgcn.hpp"
#include "skelfuse/synthetic.hpp"

using namespace skelfuse;

namespace {

Tensor random_tensor(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0f, 1.0f);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor x = random_tensor(rng, {8, c, 32, 32}), k = random_tensor(rng, {c, c, 3, 3});
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(conv2d(tape.constant(x), tape.constant(k), {1, 1}, {1, 1}).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(16)->Arg(32);

void BM_Conv2dBackward(benchmark::State& state) {
  Rng rng(2);
  Parameter x(random_tensor(rng, {8, 16, 32, 32})), k(random_tensor(rng, {16, 16, 3, 3}));
  for (auto _ : state) {
    Tape tape;
    tape.backward(sum_all(conv2d(tape.leaf(x), tape.leaf(k), {1, 1}, {1, 1})));
  }
}
BENCHMARK(BM_Conv2dBackward);

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const Tensor a = random_tensor(rng, {n, n}), b = random_tensor(rng, {n, n});
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(matmul(tape.constant(a), tape.constant(b)).value().data().data());
  }
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_StGcnClassify(benchmark::State& state) {
  SyntheticSpec spec;
  const SyntheticSample s = generate_synthetic_sample(spec, 0, false);
  Rng rng(4);
  StGcnModel m = StGcnModel::create(StGcnConfig{}, partition_neighbors(stick_figure_template(), s.skeletons[0]), rng);
  for (auto _ : state) benchmark::DoNotOptimize(stgcn_classify(m, s.skeletons[0]).probs.data().data());
}
BENCHMARK(BM_StGcnClassify);

void BM_RgbClassify(benchmark::State& state) {
  Rng rng(5);
  RgbNet net = RgbNet::create(RgbNetConfig{}, rng);
  const Tensor x = random_tensor(rng, {8, 3, 64, 64});
  for (auto _ : state) benchmark::DoNotOptimize(rgb_classify(net, x).probs.data().data());
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_RgbClassify);

void BM_SyntheticGrid(benchmark::State& state) {
  SyntheticSpec spec;
  spec.samples_per_class = 2;
  const Dataset d = generate_synthetic_dataset(spec);
  for (auto _ : state) benchmark::DoNotOptimize(synthetic_grid(spec, d, 0, 5, 16).data().data());
}
BENCHMARK(BM_SyntheticGrid);

}  // namespace

BENCHMARK_MAIN();
