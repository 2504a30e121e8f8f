#include <benchmark/benchmark.h>

#include <complex>
#include <random>
#include <vector>

#include "spectrum/fft.hpp"
#include "spectrum/spectral_core.hpp"

namespace {

using namespace spectrum;

std::vector<spectral::Complex> random_signal(std::size_t n) {
  std::mt19937_64 rng(n);
  std::normal_distribution<double> d;
  std::vector<spectral::Complex> x(n);
  for (auto& v : x) v = {d(rng), d(rng)};
  return x;
}

void BM_FftPowerOfTwo(benchmark::State& state) {
  const auto x = random_signal(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(spectral::fft(x));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_FftPowerOfTwo)->RangeMultiplier(4)->Range(16, 4096)->Complexity(benchmark::oNLogN);

// Prime lengths take the chirp-z path.
void BM_FftBluestein(benchmark::State& state) {
  const auto x = random_signal(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(spectral::fft(x));
}
BENCHMARK(BM_FftBluestein)->Arg(17)->Arg(127)->Arg(509)->Arg(2039);

void BM_RealRoundTrip(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(7);
  std::normal_distribution<double> d;
  Matrix x(32, len);
  for (double& v : x.values()) v = d(rng);
  for (auto _ : state) benchmark::DoNotOptimize(spectral::irdft(spectral::rdft(x)));
}
BENCHMARK(BM_RealRoundTrip)->Arg(60)->Arg(120)->Arg(240);

void BM_Spectrogram(benchmark::State& state) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> d;
  std::vector<double> channel(2400);
  for (double& v : channel) v = d(rng);
  for (auto _ : state)
    benchmark::DoNotOptimize(spectral::stft_spectrogram(channel, 64, 16, spectral::WindowKind::hann));
}
BENCHMARK(BM_Spectrogram);

}  // namespace
