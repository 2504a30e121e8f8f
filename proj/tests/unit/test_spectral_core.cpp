#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "spectrum/error.hpp"
#include "spectrum/spectral_core.hpp"

using namespace spectrum;
using namespace spectrum::spectral;

namespace {

FilterWeights constant_filter(std::size_t rows, std::size_t scale, double re, double im) {
  return {Matrix(rows, scale, re), Matrix(rows, scale, im)};
}

}  // namespace

TEST_CASE("rdft examples") {
  const auto a = rdft(Matrix::from_rows({{1, 1, 1, 1}}));
  CHECK(a.bins() == 2);
  CHECK(a.re(0, 0) == doctest::Approx(4));
  CHECK(std::abs(a.re(0, 1)) < 1e-12);
  CHECK(std::abs(a.im(0, 1)) < 1e-12);

  const auto b = rdft(Matrix::from_rows({{1, 0, 0, 0}}));
  CHECK(b.re(0, 0) == doctest::Approx(1));
  CHECK(b.re(0, 1) == doctest::Approx(1));

  const auto c = rdft(Matrix::from_rows({{0, 1, 0, 0}}));
  CHECK(c.re(0, 0) == doctest::Approx(1));
  CHECK(std::abs(c.re(0, 1)) < 1e-12);
  CHECK(c.im(0, 1) == doctest::Approx(-1));
}

TEST_CASE("rdft agrees with the naive transform") {
  std::mt19937_64 rng(4);
  for (std::size_t n = 1; n <= 70; ++n) {
    const Matrix x = oracle::random_matrix(3, n, rng);
    const auto s = rdft(x);
    for (std::size_t r = 0; r < 3; ++r) {
      std::vector<std::complex<double>> row(n);
      for (std::size_t k = 0; k < n; ++k) row[k] = x(r, k);
      const auto ref = oracle::naive_dft(row);
      for (std::size_t k = 0; k < half_bins(n); ++k) {
        CHECK(std::abs(s.re(r, k) - ref[k].real()) < 1e-9);
        CHECK(std::abs(s.im(r, k) - ref[k].imag()) < 1e-9);
      }
      if (n % 2 == 0) CHECK(std::abs(s.nyquist[r] - ref[n / 2].real()) < 1e-9);
    }
    const auto d = rdft_direct(x);
    CHECK(max_abs_diff(s.re, d.re) < 1e-9);
    CHECK(max_abs_diff(s.im, d.im) < 1e-9);
  }
}

TEST_CASE("irdft inverts rdft") {
  std::mt19937_64 rng(5);
  for (std::size_t n = 1; n <= 64; ++n) {
    const Matrix x = oracle::random_matrix(2, n, rng);
    CHECK_MESSAGE(max_abs_diff(irdft(rdft(x)), x) < 1e-9, "N=" << n);
  }
}

TEST_CASE("irdft examples") {
  HalfSpectrum s;
  s.length = 4;
  s.re = Matrix::from_rows({{4, 0}});
  s.im = Matrix(1, 2);
  s.nyquist = {0};
  CHECK(max_abs_diff(irdft(s), Matrix(1, 4, 1.0)) < 1e-12);
  s.re = Matrix(1, 2);
  CHECK(max_abs_diff(irdft(s), Matrix(1, 4, 0.0)) < 1e-12);
}

TEST_CASE("pack and unpack round trip") {
  std::mt19937_64 rng(6);
  for (std::size_t n : {1, 2, 5, 8}) {
    const auto s = rdft(oracle::random_matrix(2, n, rng));
    const Matrix p = pack(s);
    CHECK(p.cols() == packed_width(n));
    const auto u = unpack(p, n);
    CHECK(u.re == s.re);
    CHECK(u.im == s.im);
    CHECK(u.nyquist == s.nyquist);
  }
  CHECK_THROWS_AS(unpack(Matrix(1, 3), 8), Error);
}

TEST_CASE("Parseval and linearity") {
  std::mt19937_64 rng(8);
  for (std::size_t n : {6, 9, 32, 45}) {
    const Matrix a = oracle::random_matrix(1, n, rng);
    const Matrix b = oracle::random_matrix(1, n, rng);
    std::vector<std::complex<double>> row(n);
    for (std::size_t k = 0; k < n; ++k) row[k] = a(0, k);
    const auto full = oracle::naive_dft(row);
    double time_energy = 0, freq_energy = 0;
    for (std::size_t k = 0; k < n; ++k) {
      time_energy += a(0, k) * a(0, k);
      freq_energy += std::norm(full[k]);
    }
    CHECK(std::abs(time_energy - freq_energy / static_cast<double>(n)) < 1e-6 * time_energy);

    Matrix mix(1, n);
    for (std::size_t k = 0; k < n; ++k) mix(0, k) = 2.5 * a(0, k) - 0.5 * b(0, k);
    const auto sa = rdft(a), sb = rdft(b), sm = rdft(mix);
    for (std::size_t k = 0; k < half_bins(n); ++k) {
      CHECK(std::abs(sm.re(0, k) - (2.5 * sa.re(0, k) - 0.5 * sb.re(0, k))) < 1e-9);
      CHECK(std::abs(sm.im(0, k) - (2.5 * sa.im(0, k) - 0.5 * sb.im(0, k))) < 1e-9);
    }
  }
}

TEST_CASE("interpolate_weights examples") {
  std::mt19937_64 rng(9);
  const FilterWeights w{oracle::random_matrix(2, 4, rng), oracle::random_matrix(2, 4, rng)};
  const auto same = interpolate_weights(w, 4);
  CHECK(same.re == w.re);
  CHECK(same.im == w.im);

  const auto mid = interpolate_weights({Matrix::from_rows({{0, 1}}), Matrix(1, 2)}, 3);
  CHECK(mid.re(0, 0) == doctest::Approx(0));
  CHECK(mid.re(0, 1) == doctest::Approx(0.5));
  CHECK(mid.re(0, 2) == doctest::Approx(1));

  const auto cx = interpolate_weights({Matrix::from_rows({{0, 2}}), Matrix::from_rows({{0, 2}})}, 3);
  CHECK(cx.re(0, 1) == doctest::Approx(1));
  CHECK(cx.im(0, 1) == doctest::Approx(1));
  CHECK(cx.im(0, 2) == doctest::Approx(2));

  CHECK_THROWS_AS(interpolate_weights(w, 0), Error);
  CHECK_THROWS_AS(interpolate_weights({Matrix(1, 1), Matrix(1, 1)}, 3), Error);
}

TEST_CASE("spectral filter examples") {
  std::mt19937_64 rng(10);
  for (std::size_t n : {1, 2, 7, 16, 33}) {
    const Matrix x = oracle::random_matrix(3, n, rng);
    CHECK(max_abs_diff(apply_spectral_filter(x, constant_filter(3, 16, 1, 0)), x) < 1e-9);
    CHECK(apply_spectral_filter(x, constant_filter(3, 16, 0, 0)).max_abs() < 1e-12);
  }
  // DC-only mask keeps the mean: l = 2 taps interpolated to 2 bins stays [1, 0].
  const FilterWeights dc{Matrix::from_rows({{1, 0}}), Matrix(1, 2)};
  const Matrix y = apply_spectral_filter(Matrix::from_rows({{1, 2, 3, 4}}), dc);
  for (std::size_t k = 0; k < 4; ++k) CHECK(y(0, k) == doctest::Approx(2.5));
}

TEST_CASE("stft spectrogram") {
  const std::vector<double> constant(100, 3.0);
  const Matrix s = stft_spectrogram(constant, 16, 4, WindowKind::rectangular);
  CHECK(s.rows() == (100 - 16) / 4 + 1);
  CHECK(s.cols() == 8);
  for (std::size_t f = 0; f < s.rows(); ++f)
    for (std::size_t k = 1; k < s.cols(); ++k) CHECK(s(f, k) < 1e-9 * s(f, 0));

  const std::size_t window = 64, bin = 5;
  std::vector<double> tone(400);
  for (std::size_t i = 0; i < tone.size(); ++i)
    tone[i] = std::sin(2 * std::numbers::pi * static_cast<double>(bin * i) / window);
  const Matrix t = stft_spectrogram(tone, window, 16);
  for (std::size_t f = 0; f < t.rows(); ++f) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < t.cols(); ++k)
      if (t(f, k) > t(f, best)) best = k;
    CHECK(best == bin);
  }

  CHECK(stft_spectrogram(tone, 400, 1).rows() == 1);
  CHECK_THROWS_AS(stft_spectrogram(tone, 401, 1), Error);
  CHECK_THROWS_AS(stft_spectrogram(tone, 16, 0), Error);
}

TEST_CASE("windows") {
  const auto h = make_window(8, WindowKind::hann);
  CHECK(h[0] == doctest::Approx(0));
  CHECK(h[4] == doctest::Approx(1));
  for (double v : make_window(5, WindowKind::rectangular)) CHECK(v == 1);
}

TEST_CASE("spectrogram writers") {
  const Matrix s = Matrix::from_rows({{1, 0.5}, {0, 2}});
  std::ostringstream csv;
  write_csv(s, csv);
  CHECK(csv.str() == "1,0.5\n0,2\n");
  std::ostringstream pgm;
  write_pgm(s, pgm);
  const std::string bytes = pgm.str();
  CHECK(bytes.rfind("P5\n2 2\n255\n", 0) == 0);
  CHECK(bytes.size() == std::string("P5\n2 2\n255\n").size() + 4);
}
