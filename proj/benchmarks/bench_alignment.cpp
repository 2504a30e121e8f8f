#include <benchmark/benchmark.h>

#include <random>

#include "spectrum/alignment.hpp"

namespace {

using namespace spectrum;

Matrix random_sequence(std::size_t len, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Matrix m(len, dim);
  for (double& v : m.values()) v = d(rng);
  return m;
}

void BM_Dtw(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_sequence(len, 64, 1), b = random_sequence(len, 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(align::dtw(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Dtw)->RangeMultiplier(2)->Range(16, 256)->Complexity(benchmark::oNSquared);

void BM_SoftDtw(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_sequence(len, 64, 3), b = random_sequence(len, 64, 4);
  for (auto _ : state) benchmark::DoNotOptimize(align::soft_dtw(a, b, 5.0));
}
BENCHMARK(BM_SoftDtw)->Arg(30)->Arg(60)->Arg(120);

void BM_SoftDtwGradient(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_sequence(len, 64, 5), b = random_sequence(len, 64, 6);
  for (auto _ : state) benchmark::DoNotOptimize(align::soft_dtw_grad(a, b, 5.0));
}
BENCHMARK(BM_SoftDtwGradient)->Arg(30)->Arg(60)->Arg(120);

}  // namespace
