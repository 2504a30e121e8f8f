#include "spectrum/spectral_core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "spectrum/error.hpp"

namespace spectrum::spectral {
namespace {

using Transform = std::vector<Complex> (*)(std::span<const Complex>, Direction);

HalfSpectrum rdft_with(const Matrix& x, Transform transform) {
  const std::size_t n = x.cols();
  if (n == 0) throw Error("rdft: signal length must be at least 1");
  const std::size_t h = half_bins(n);
  HalfSpectrum out{Matrix(x.rows(), h), Matrix(x.rows(), h), {}, n};
  if (out.has_nyquist()) out.nyquist.assign(x.rows(), 0.0);
  std::vector<Complex> buf(n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t i = 0; i < n; ++i) buf[i] = {x(r, i), 0.0};
    const auto spec = transform(buf, Direction::forward);
    for (std::size_t k = 0; k < h; ++k) {
      out.re(r, k) = spec[k].real();
      out.im(r, k) = spec[k].imag();
    }
    if (out.has_nyquist()) out.nyquist[r] = spec[n / 2].real();
  }
  return out;
}

}  // namespace

HalfSpectrum rdft(const Matrix& x) { return rdft_with(x, &fft); }

HalfSpectrum rdft_direct(const Matrix& x) { return rdft_with(x, &dft_direct); }

Matrix irdft(const HalfSpectrum& spec) {
  const std::size_t n = spec.length;
  const std::size_t h = half_bins(n);
  if (n == 0 || spec.bins() != h || spec.im.cols() != h || spec.im.rows() != spec.rows()) {
    throw Error("irdft: half spectrum does not match length " + std::to_string(n));
  }
  if (spec.has_nyquist() && spec.nyquist.size() != spec.rows()) {
    throw Error("irdft: missing Nyquist coefficients for even length");
  }
  Matrix y(spec.rows(), n);
  std::vector<Complex> full(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < spec.rows(); ++r) {
    full[0] = {spec.re(r, 0), 0.0};
    for (std::size_t k = 1; k < h; ++k) {
      full[k] = {spec.re(r, k), spec.im(r, k)};
      full[n - k] = std::conj(full[k]);
    }
    if (spec.has_nyquist()) full[n / 2] = {spec.nyquist[r], 0.0};
    const auto time = fft(full, Direction::inverse);
    double peak = 0.0, residue = 0.0, coeff_peak = 0.0;
    for (const Complex& c : full) coeff_peak = std::max(coeff_peak, std::abs(c));
    for (std::size_t i = 0; i < n; ++i) {
      y(r, i) = time[i].real() * inv_n;
      peak = std::max(peak, std::abs(y(r, i)));
      residue = std::max(residue, std::abs(time[i].imag() * inv_n));
    }
    const double scale = std::max(peak, coeff_peak * inv_n);
    if (residue > 1e-9 * scale) {
      throw ConsistencyError("irdft: imaginary residue " + std::to_string(residue) +
                             " exceeds tolerance; spectrum is not conjugate-symmetric");
    }
  }
  return y;
}

Matrix pack(const HalfSpectrum& spec) {
  const std::size_t h = spec.bins();
  Matrix out(spec.rows(), packed_width(spec.length));
  for (std::size_t r = 0; r < spec.rows(); ++r) {
    for (std::size_t k = 0; k < h; ++k) {
      out(r, k) = spec.re(r, k);
      out(r, h + k) = spec.im(r, k);
    }
    if (spec.has_nyquist()) out(r, 2 * h) = spec.nyquist[r];
  }
  return out;
}

HalfSpectrum unpack(const Matrix& packed, std::size_t length) {
  if (packed.cols() != packed_width(length)) {
    throw Error("unpack: packed width does not match length " + std::to_string(length));
  }
  const std::size_t h = half_bins(length);
  HalfSpectrum out{Matrix(packed.rows(), h), Matrix(packed.rows(), h), {}, length};
  if (out.has_nyquist()) out.nyquist.assign(packed.rows(), 0.0);
  for (std::size_t r = 0; r < packed.rows(); ++r) {
    for (std::size_t k = 0; k < h; ++k) {
      out.re(r, k) = packed(r, k);
      out.im(r, k) = packed(r, h + k);
    }
    if (out.has_nyquist()) out.nyquist[r] = packed(r, 2 * h);
  }
  return out;
}

std::vector<InterpTap> interpolation_taps(std::size_t from, std::size_t to) {
  if (to == 0) throw Error("interpolate: target length must be positive");
  if (from == 0) throw Error("interpolate: source length must be positive");
  std::vector<InterpTap> taps(to);
  for (std::size_t j = 0; j < to; ++j) {
    if (from == to) {
      taps[j] = {j, j, 0.0};
      continue;
    }
    const double pos = to == 1 ? 0.0
                               : static_cast<double>(j) * static_cast<double>(from - 1) /
                                     static_cast<double>(to - 1);
    const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)), from - 1);
    const std::size_t hi = std::min(lo + 1, from - 1);
    taps[j] = {lo, hi, pos - static_cast<double>(lo)};
  }
  return taps;
}

ComplexMatrix interpolate_weights(const FilterWeights& w, std::size_t target) {
  if (w.scale() < 2) throw Error("interpolate_weights: filter scale must be at least 2");
  const auto taps = interpolation_taps(w.scale(), target);
  ComplexMatrix out{Matrix(w.rows(), target), Matrix(w.rows(), target)};
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t j = 0; j < target; ++j) {
      const auto& t = taps[j];
      out.re(r, j) = (1.0 - t.frac) * w.re(r, t.lo) + t.frac * w.re(r, t.hi);
      out.im(r, j) = (1.0 - t.frac) * w.im(r, t.lo) + t.frac * w.im(r, t.hi);
    }
  }
  return out;
}

HalfSpectrum modulate(const HalfSpectrum& spec, const ComplexMatrix& weights) {
  if (!weights.re.same_shape(spec.re) || !weights.im.same_shape(spec.im)) {
    throw Error("modulate: weight shape does not match spectrum");
  }
  HalfSpectrum out = spec;
  const std::size_t h = spec.bins();
  for (std::size_t r = 0; r < spec.rows(); ++r) {
    for (std::size_t k = 0; k < h; ++k) {
      const Complex v = Complex{spec.re(r, k), spec.im(r, k)} *
                        Complex{weights.re(r, k), weights.im(r, k)};
      out.re(r, k) = v.real();
      out.im(r, k) = v.imag();
    }
    if (spec.has_nyquist()) out.nyquist[r] = spec.nyquist[r] * weights.re(r, h - 1);
  }
  return out;
}

Matrix apply_spectral_filter(const Matrix& x, const FilterWeights& w) {
  if (w.rows() != x.rows()) throw Error("apply_spectral_filter: channel count mismatch");
  const HalfSpectrum spec = rdft(x);
  return irdft(modulate(spec, interpolate_weights(w, spec.bins())));
}

std::vector<double> make_window(std::size_t length, WindowKind kind) {
  std::vector<double> w(length, 1.0);
  if (kind == WindowKind::hann) {
    for (std::size_t i = 0; i < length; ++i)
      w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                   static_cast<double>(length)));
  }
  return w;
}

Matrix stft_spectrogram(std::span<const double> channel, std::size_t window, std::size_t hop,
                        WindowKind kind) {
  if (window == 0) throw Error("stft: window must be positive");
  if (hop == 0) throw Error("stft: hop must be positive");
  if (channel.size() < window) {
    throw Error("stft: signal length " + std::to_string(channel.size()) +
                " is shorter than the window " + std::to_string(window));
  }
  const std::size_t frames = (channel.size() - window) / hop + 1;
  const std::size_t bins = half_bins(window);
  const auto taper = make_window(window, kind);
  Matrix out(frames, bins);
  std::vector<Complex> buf(window);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < window; ++i) buf[i] = {channel[f * hop + i] * taper[i], 0.0};
    const auto spec = fft(buf);
    for (std::size_t k = 0; k < bins; ++k) out(f, k) = std::abs(spec[k]);
  }
  return out;
}

void write_csv(const Matrix& m, std::ostream& out) {
  const auto old_precision = out.precision(17);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c != 0) out << ',';
      out << m(r, c);
    }
    out << '\n';
  }
  out.precision(old_precision);
}

void write_pgm(const Matrix& spectrogram, std::ostream& out) {
  const std::size_t width = spectrogram.rows();
  const std::size_t height = spectrogram.cols();
  double peak = 0.0;
  for (double v : spectrogram.values()) peak = std::max(peak, std::log1p(v));
  out << "P5\n" << width << ' ' << height << "\n255\n";
  for (std::size_t row = 0; row < height; ++row) {
    const std::size_t bin = height - 1 - row;
    for (std::size_t f = 0; f < width; ++f) {
      const double level = peak > 0.0 ? std::log1p(spectrogram(f, bin)) / peak : 0.0;
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * level))));
    }
  }
}

}  // namespace spectrum::spectral
