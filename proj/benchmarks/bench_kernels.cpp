#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "robustaug/graph.hpp"
#include "robustaug/kernels.hpp"

using namespace robustaug;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(gen);
  return v;
}

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(shape, 0.0);
  t.data = random_values(t.size(), seed);
  return t;
}

void BM_GemmNN(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    kernels::gemm_nn(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_GemmNN)->Arg(32)->Arg(64)->Arg(128)->Arg(256);

void BM_GemmTN(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    kernels::gemm_tn(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_GemmTN)->Arg(64)->Arg(256);

// 3x3 convolution, batch 64, 16x16 images, channels in -> out.
void BM_Conv2dForward(benchmark::State& state) {
  const auto cin = static_cast<std::size_t>(state.range(0)), cout = static_cast<std::size_t>(state.range(1));
  const Tensor x = random_tensor({64, cin, 16, 16}, 1), w = random_tensor({cout, cin, 3, 3}, 2);
  for (auto _ : state) {
    Graph g;
    const Var y = g.conv2d(g.constant(x), g.constant(w), std::nullopt, 1, 1);
    benchmark::DoNotOptimize(g.value(y).data.data());
  }
}
BENCHMARK(BM_Conv2dForward)->Args({3, 8})->Args({8, 16})->Args({16, 32});

void BM_Conv2dBackward(benchmark::State& state) {
  const auto cin = static_cast<std::size_t>(state.range(0)), cout = static_cast<std::size_t>(state.range(1));
  const Tensor x = random_tensor({64, cin, 16, 16}, 1), w = random_tensor({cout, cin, 3, 3}, 2);
  for (auto _ : state) {
    Graph g;
    const Var xv = g.input(x), wv = g.input(w);
    g.backward(g.sum(g.conv2d(xv, wv, std::nullopt, 1, 1)));
    benchmark::DoNotOptimize(g.grad(wv).data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({3, 8})->Args({8, 16})->Args({16, 32});

}  // namespace
