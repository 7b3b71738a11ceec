#include <benchmark/benchmark.h>

#include <vector>

#include "magnet/backtest.hpp"
#include "magnet/mage.hpp"
#include "magnet/model.hpp"
#include "magnet/params.hpp"
#include "magnet/run_config.hpp"

namespace {

using namespace magnet;

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.normal();
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(256);

void BM_SelectiveScanForwardBackward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const std::size_t n = 8, e = 16, s = 8;
  Rng rng(2);
  const Tensor x = random_tensor({n, t, e}, rng), b = random_tensor({n, t, s}, rng), c = random_tensor({n, t, s}, rng);
  Tensor delta({n, t, e});
  for (double& v : delta.mutable_data()) v = 0.01 + 0.1 * rng.uniform();
  Tensor a({e, s});
  for (double& v : a.mutable_data()) v = -1.0 - rng.uniform();
  const Tensor d = random_tensor({e}, rng);
  for (auto _ : state) {
    Tape tape;
    const Var y = mage::selective_scan(tape.leaf(x), tape.leaf(delta), tape.leaf(a), tape.leaf(b), tape.leaf(c),
                                       tape.leaf(d));
    tape.backward(sum_all(y));
    benchmark::DoNotOptimize(tape.grad(y));
  }
}
BENCHMARK(BM_SelectiveScanForwardBackward)->Arg(8)->Arg(32);

struct ToyModel {
  ModelConfig cfg = load_run_config(MAGNET_TOY_CONFIG).model;
  ParamStore params = init_model(cfg);
  Tensor window;
  ToyModel() {
    Rng rng(3);
    window = random_tensor({cfg.stocks, cfg.steps, cfg.features}, rng);
  }
};

void BM_ToyPredict(benchmark::State& state) {
  const ToyModel m;
  for (auto _ : state) benchmark::DoNotOptimize(predict(m.cfg, m.params, m.window));
}
BENCHMARK(BM_ToyPredict);

void BM_ToyTrainingStepGradients(benchmark::State& state) {
  const ToyModel m;
  const std::vector<int> labels(m.cfg.stocks, 1);
  for (auto _ : state) {
    Tape tape;
    const BoundParams bound(tape, m.params);
    const Var probs = forward(tape.constant(m.window), ParamScope(bound), m.cfg, ForwardContext{});
    const Var l = loss(probs, labels);
    tape.backward(l);
    benchmark::DoNotOptimize(tape.grad(bound.vars().front()));
  }
}
BENCHMARK(BM_ToyTrainingStepGradients);

std::pair<Tensor, Tensor> random_market(std::size_t days, std::size_t n) {
  Rng rng(4);
  Tensor probs({days, n}), prices({days + 1, n});
  for (double& v : probs.mutable_data()) v = rng.uniform();
  for (std::size_t j = 0; j < n; ++j) prices.at({0, j}) = 50.0 + 50.0 * rng.uniform();
  for (std::size_t d = 1; d <= days; ++d)
    for (std::size_t j = 0; j < n; ++j) prices.at({d, j}) = prices.at({d - 1, j}) * (1.0 + 0.03 * (rng.uniform() - 0.5));
  return {probs, prices};
}

void BM_Backtest(benchmark::State& state) {
  const auto [probs, prices] = random_market(static_cast<std::size_t>(state.range(0)), 30);
  StrategyParams sp;
  for (auto _ : state) benchmark::DoNotOptimize(run_backtest(probs, prices, sp));
}
BENCHMARK(BM_Backtest)->Arg(80)->Arg(250);

void BM_StandardGridSearch(benchmark::State& state) {
  const auto [probs, prices] = random_market(80, 8);
  const GridSpec grid = GridSpec::standard();
  for (auto _ : state) benchmark::DoNotOptimize(grid_search(probs, prices, grid));
}
BENCHMARK(BM_StandardGridSearch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
