#include <benchmark/benchmark.h>

#include <random>

#include "spectrum/diff_engine.hpp"
#include "spectrum/network.hpp"

namespace {

using namespace spectrum;

signal::FeatureSequence random_features(std::size_t len) {
  std::mt19937_64 rng(len);
  std::normal_distribution<double> d;
  Matrix m(len, signal::kFullChannelCount);
  for (double& v : m.values()) v = d(rng);
  return {m};
}

net::ModelConfig config_with_width(std::int64_t width) {
  net::ModelConfig c;
  c.width = static_cast<std::size_t>(width);
  return c;
}

void BM_Embed(benchmark::State& state) {
  const auto params = net::init_params(config_with_width(state.range(0)), 1);
  const auto features = random_features(static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(net::embed(features, params));
  state.counters["params"] = static_cast<double>(params.parameter_count());
}
BENCHMARK(BM_Embed)->Args({32, 120})->Args({32, 240})->Args({64, 240})->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const auto config = config_with_width(state.range(0));
  const auto params = net::init_params(config, 2);
  const auto features = random_features(240);
  for (auto _ : state) {
    ad::Tape tape;
    const auto leaves = net::place(tape, params, true);
    const auto bound = net::bind(config, leaves);
    const auto out = net::forward(tape, bound, config, features);
    tape.backward(ad::add(ad::sum(out.temporal), ad::sum(out.logit)));
    benchmark::DoNotOptimize(tape.size());
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
