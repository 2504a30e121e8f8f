#pragma once

#include <complex>
#include <span>
#include <vector>

namespace spectrum::spectral {

using Complex = std::complex<double>;

enum class Direction { forward, inverse };

/// Unnormalized discrete Fourier transform of any length. Powers of two use an
/// iterative radix-2 kernel; other lengths go through Bluestein's chirp-z
/// algorithm. The inverse direction flips the exponent sign and does not divide by N.
std::vector<Complex> fft(std::span<const Complex> input, Direction dir = Direction::forward);

/// O(N^2) reference transform with exact integer phase reduction.
std::vector<Complex> dft_direct(std::span<const Complex> input,
                                Direction dir = Direction::forward);

[[nodiscard]] constexpr bool is_power_of_two(std::size_t n) noexcept {
  return n != 0 && (n & (n - 1)) == 0;
}

}  // namespace spectrum::spectral
