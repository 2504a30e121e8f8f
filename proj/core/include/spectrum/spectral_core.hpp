#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "spectrum/fft.hpp"
#include "spectrum/matrix.hpp"

namespace spectrum::spectral {

/// Number of retained coefficients of a length-N real signal: ceil(N / 2).
[[nodiscard]] constexpr std::size_t half_bins(std::size_t n) noexcept { return (n + 1) / 2; }

/// Row-wise half spectrum of a real d x N signal.
///
/// `re`/`im` hold bins 0 .. ceil(N/2)-1. For even N the Nyquist bin N/2 is not
/// among those, yet it carries signal energy (it is always real for real
/// input), so it is kept separately in `nyquist` (one value per row, empty for
/// odd N). With it the transform is exactly invertible for every N.
struct HalfSpectrum {
  Matrix re;
  Matrix im;
  std::vector<double> nyquist;
  std::size_t length = 0;  ///< N of the originating signal

  [[nodiscard]] std::size_t rows() const noexcept { return re.rows(); }
  [[nodiscard]] std::size_t bins() const noexcept { return re.cols(); }
  [[nodiscard]] bool has_nyquist() const noexcept { return length % 2 == 0; }
};

struct ComplexMatrix {
  Matrix re;
  Matrix im;
};

/// Learnable complex filter, one row per embedding channel, `scale()` taps long.
struct FilterWeights {
  Matrix re;
  Matrix im;

  [[nodiscard]] std::size_t rows() const noexcept { return re.rows(); }
  [[nodiscard]] std::size_t scale() const noexcept { return re.cols(); }
};

HalfSpectrum rdft(const Matrix& x);
/// Same contract as rdft, evaluated with the O(N^2) direct sum.
HalfSpectrum rdft_direct(const Matrix& x);

/// Rebuilds the conjugate-symmetric full spectrum and inverts it with a 1/N
/// factor. The imaginary part of the DC bin (and of the Nyquist bin, which is
/// stored as a real value) cannot survive conjugate symmetry and is dropped.
/// Throws ConsistencyError if the inverse still carries an imaginary residue.
Matrix irdft(const HalfSpectrum& spec);

/// Packs a half spectrum as [re | im | nyquist?] columns: d x (2H + (N even)).
Matrix pack(const HalfSpectrum& spec);
HalfSpectrum unpack(const Matrix& packed, std::size_t length);
[[nodiscard]] constexpr std::size_t packed_width(std::size_t n) noexcept {
  return 2 * half_bins(n) + (n % 2 == 0 ? 1 : 0);
}

/// One output sample of a 1-D linear resize: value = (1-frac)*src[lo] + frac*src[hi].
struct InterpTap {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double frac = 0.0;
};

/// Corner-aligned linear resize taps from `from` points to `to` points.
std::vector<InterpTap> interpolation_taps(std::size_t from, std::size_t to);

/// Resizes each row of w to `target` taps; real and imaginary parts independently.
ComplexMatrix interpolate_weights(const FilterWeights& w, std::size_t target);

/// Pointwise product with per-bin weights (d x H). The Nyquist bin is scaled
/// by the real part of the last weight, the only part that keeps it real.
HalfSpectrum modulate(const HalfSpectrum& spec, const ComplexMatrix& weights);

/// irdft(rdft(x) * interpolate(w, ceil(N/2))).
Matrix apply_spectral_filter(const Matrix& x, const FilterWeights& w);

enum class WindowKind { hann, rectangular };

/// Periodic window of the given length.
std::vector<double> make_window(std::size_t length, WindowKind kind);

/// Magnitude STFT: frames x ceil(window/2), frames = floor((L - window)/hop) + 1.
Matrix stft_spectrogram(std::span<const double> channel, std::size_t window, std::size_t hop,
                        WindowKind kind = WindowKind::hann);

/// Row-major CSV, one frame per line.
void write_csv(const Matrix& m, std::ostream& out);
/// Binary 8-bit PGM: time runs left to right, frequency bottom to top,
/// intensity log1p(magnitude) scaled to the frame maximum.
void write_pgm(const Matrix& spectrogram, std::ostream& out);

}  // namespace spectrum::spectral
