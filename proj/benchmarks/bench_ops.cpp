#include <benchmark/benchmark.h>

#include <random>

#include "paratune/ops.hpp"

using namespace paratune;

namespace {

Tensor filled(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Tensor t({rows, cols});
  for (auto& v : t.values) v = d(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = filled(n, n, 1), b = filled(n, n, 2);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(ops::matmul(tape.constant(a), tape.constant(b)).value().values.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128)->Arg(256);

void BM_SoftmaxBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor x = filled(n, n, 3);
  for (auto _ : state) {
    Tape tape;
    Var v = tape.leaf(x);
    Var loss = ops::softmax_cross_entropy(ops::row(ops::softmax(v), 0), 0);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(v).values.data());
  }
}
BENCHMARK(BM_SoftmaxBackward)->Arg(32)->Arg(64);

void BM_MaxPoolSpan(benchmark::State& state) {
  const Tensor h = filled(64, 64, 4);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(ops::max_pool_span(tape.constant(h), 8, 40).value().values.data());
  }
}
BENCHMARK(BM_MaxPoolSpan);

}  // namespace

BENCHMARK_MAIN();
