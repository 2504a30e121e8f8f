#include "spectrum/fft.hpp"

#include <cmath>
#include <numbers>

namespace spectrum::spectral {
namespace {

// Twiddle for phase 2*pi*num/den, reduced first so large products stay exact.
Complex unit_root(std::size_t num, std::size_t den, double sign) {
  const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(num % den) /
                       static_cast<double>(den);
  return {std::cos(angle), std::sin(angle)};
}

void radix2_inplace(std::vector<Complex>& a, double sign) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    std::vector<Complex> tw(half);
    for (std::size_t k = 0; k < half; ++k) tw[k] = unit_root(k, len, sign);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const Complex u = a[i + k];
        const Complex v = a[i + k + half] * tw[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

std::vector<Complex> bluestein(std::span<const Complex> x, double sign) {
  const std::size_t n = x.size();
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  // chirp[k] = exp(sign * i * pi * k^2 / n); k^2 reduced modulo 2n.
  std::vector<Complex> chirp(n);
  for (std::size_t k = 0; k < n; ++k) chirp[k] = unit_root((k * k) % (2 * n), 2 * n, sign);

  std::vector<Complex> a(m), b(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * chirp[k];
  b[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);

  radix2_inplace(a, -1.0);
  radix2_inplace(b, -1.0);
  for (std::size_t i = 0; i < m; ++i) a[i] *= b[i];
  radix2_inplace(a, 1.0);

  std::vector<Complex> out(n);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * inv_m * chirp[k];
  return out;
}

}  // namespace

std::vector<Complex> fft(std::span<const Complex> input, Direction dir) {
  const double sign = dir == Direction::forward ? -1.0 : 1.0;
  if (input.size() <= 1) return {input.begin(), input.end()};
  if (is_power_of_two(input.size())) {
    std::vector<Complex> a(input.begin(), input.end());
    radix2_inplace(a, sign);
    return a;
  }
  return bluestein(input, sign);
}

std::vector<Complex> dft_direct(std::span<const Complex> input, Direction dir) {
  const double sign = dir == Direction::forward ? -1.0 : 1.0;
  const std::size_t n = input.size();
  std::vector<Complex> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    Complex acc{0.0, 0.0};
    for (std::size_t j = 0; j < n; ++j) acc += input[j] * unit_root(k * j, n, sign);
    out[k] = acc;
  }
  return out;
}

}  // namespace spectrum::spectral
