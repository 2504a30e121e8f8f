#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "spectrum/ad_ops.hpp"
#include "spectrum/alignment.hpp"
#include "spectrum/error.hpp"
#include "spectrum/spectral_core.hpp"

using namespace spectrum;
using namespace spectrum::ad;

namespace {

// Contracts the output with a fixed random weight so every output entry matters.
Var probe(Tape& tape, Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(out, tape.constant(oracle::random_matrix(out.rows(), out.cols(), rng))));
}

double audit(const std::vector<Matrix>& inputs, const std::function<Var(std::span<const Var>)>& f,
             double eps = 1e-6) {
  ParamSet p;
  for (std::size_t i = 0; i < inputs.size(); ++i) p.add("in" + std::to_string(i), inputs[i]);
  const Program prog = [&](Tape& tape, std::span<const Var> v) { return probe(tape, f(v), 99); };
  const GradReport r = finite_diff_check(prog, p, eps, 300, 1);
  if (r.max_rel_error >= 1e-5) MESSAGE("worst parameter: " << r.worst_param);
  return r.max_rel_error;
}

Matrix rnd(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  return oracle::random_matrix(r, c, rng, scale);
}

}  // namespace

TEST_CASE("elementwise and broadcast primitives pass the gradient audit") {
  const Matrix a = rnd(3, 4, 1), b = rnd(3, 4, 2);
  CHECK(audit({a, b}, [](auto v) { return add(v[0], v[1]); }) < 1e-5);
  CHECK(audit({a, b}, [](auto v) { return sub(v[0], v[1]); }) < 1e-5);
  CHECK(audit({a, b}, [](auto v) { return mul(v[0], v[1]); }) < 1e-5);
  CHECK(audit({a, rnd(1, 4, 3)}, [](auto v) { return add_row(v[0], v[1]); }) < 1e-5);
  CHECK(audit({a, rnd(3, 1, 4)}, [](auto v) { return add_col(v[0], v[1]); }) < 1e-5);
  CHECK(audit({a}, [](auto v) { return scale(v[0], -1.7); }) < 1e-5);
  CHECK(audit({a}, [](auto v) { return add_scalar(v[0], 2.0); }) < 1e-5);
  CHECK(audit({a}, [](auto v) { return transpose(v[0]); }) < 1e-5);
  CHECK(audit({a}, [](auto v) { return sigmoid(v[0]); }) < 1e-5);
  CHECK(audit({a}, [](auto v) { return tanh(v[0]); }) < 1e-5);
  CHECK(audit({a}, [](auto v) { return relu(v[0]); }) < 1e-5);
  CHECK(audit({a}, [](auto v) { return softmax_rows(v[0]); }) < 1e-5);
  CHECK(audit({a}, [](auto v) { return sum(v[0]); }) < 1e-5);
  CHECK(audit({a}, [](auto v) { return mean(v[0]); }) < 1e-5);
}

TEST_CASE("matmul in every transpose combination") {
  const Matrix a = rnd(3, 4, 5), b = rnd(4, 2, 6);
  CHECK(audit({a, b}, [](auto v) { return matmul(v[0], v[1]); }) < 1e-5);
  CHECK(audit({a.transposed(), b}, [](auto v) { return matmul(v[0], v[1], true, false); }) < 1e-5);
  CHECK(audit({a, b.transposed()}, [](auto v) { return matmul(v[0], v[1], false, true); }) < 1e-5);
  CHECK(audit({a.transposed(), b.transposed()},
              [](auto v) { return matmul(v[0], v[1], true, true); }) < 1e-5);
  Tape tape;
  const Var x = tape.constant(a), y = tape.constant(b);
  const Matrix ref = matmul(x, y).value();
  CHECK(max_abs_diff(matmul(tape.constant(a.transposed()), y, true, false).value(), ref) < 1e-12);
  CHECK_THROWS_AS(matmul(x, x), Error);
}

TEST_CASE("shape primitives") {
  const Matrix a = rnd(2, 7, 7), b = rnd(2, 3, 8);
  CHECK(audit({a}, [](auto v) { return avg_pool_cols(v[0], 2, 2); }) < 1e-5);
  CHECK(audit({a}, [](auto v) { return avg_pool_cols(v[0], 3, 1); }) < 1e-5);
  CHECK(audit({a, b}, [](auto v) {
          const std::vector<Var> parts{v[0], v[1]};
          return concat_cols(parts);
        }) < 1e-5);
  CHECK(audit({a}, [](auto v) { return slice_cols(v[0], 2, 3); }) < 1e-5);
  CHECK(audit({a}, [](auto v) { return gather_cols(v[0], {6, 0, 0, 3}); }) < 1e-5);
  CHECK(audit({a, b}, [](auto v) {
          const std::vector<Var> parts{v[0], v[1]};
          return mean_of(std::vector<Var>{slice_cols(concat_cols(parts), 0, 3), v[1]});
        }) < 1e-5);

  Tape tape;
  const Var x = tape.constant(Matrix::from_rows({{1, 2, 3, 4, 5}}));
  const Matrix pooled = avg_pool_cols(x, 2, 2).value();
  CHECK(pooled == Matrix::from_rows({{1.5, 3.5, 5}}));
}

TEST_CASE("conv1d") {
  const Matrix x = rnd(3, 9, 9), w = rnd(4, 3 * 5, 10), b = rnd(4, 1, 11);
  CHECK(audit({x, w, b}, [](auto v) { return conv1d(v[0], v[1], v[2], 5, 1, 2); }) < 1e-5);
  CHECK(audit({x, rnd(2, 3, 12), rnd(2, 1, 13)},
              [](auto v) { return conv1d(v[0], v[1], v[2], 1, 2, 0); }) < 1e-5);
  CHECK(audit({x, rnd(2, 9, 14), rnd(2, 1, 15)},
              [](auto v) { return conv1d(v[0], v[1], v[2], 3, 2, 1); }) < 1e-5);

  // Direct evaluation against the definition.
  Tape tape;
  const Var out = conv1d(tape.constant(x), tape.constant(w), tape.constant(b), 5, 1, 2);
  REQUIRE(out.cols() == 9);
  for (std::size_t o = 0; o < 4; ++o) {
    for (std::size_t t = 0; t < 9; ++t) {
      double acc = b(o, 0);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t j = 0; j < 5; ++j) {
          const long src = static_cast<long>(t + j) - 2;
          if (src >= 0 && src < 9) acc += w(o, c * 5 + j) * x(c, static_cast<std::size_t>(src));
        }
      CHECK(std::abs(out.value()(o, t) - acc) < 1e-12);
    }
  }
}

TEST_CASE("spectral primitives") {
  for (std::size_t n : {1, 2, 5, 8, 13}) {
    const Matrix x = rnd(2, n, 20 + n);
    CHECK(audit({x}, [](auto v) { return rdft(v[0]); }) < 1e-5);
    const Matrix packed = spectral::pack(spectral::rdft(x));
    CHECK(audit({packed}, [n](auto v) { return irdft(v[0], n); }) < 1e-5);
    const std::size_t h = spectral::half_bins(n);
    CHECK(audit({packed, rnd(2, 2 * h, 30 + n)},
                [n](auto v) { return spectral_modulate(v[0], v[1], n); }) < 1e-5);
  }
  CHECK(audit({rnd(2, 8, 40)}, [](auto v) { return interpolate_weights(v[0], 7); }) < 1e-5);
  CHECK(audit({rnd(2, 6, 41)}, [](auto v) { return interpolate_weights(v[0], 2); }) < 1e-5);
}

TEST_CASE("rdft and its adjoint are consistent") {
  std::mt19937_64 rng(50);
  for (std::size_t n : {3, 8, 11, 16}) {
    const Matrix u = oracle::random_matrix(2, n, rng);
    const Matrix v = oracle::random_matrix(2, spectral::packed_width(n), rng);
    Tape tape;
    const Var vu = tape.variable(u);
    const Var y = rdft(vu);
    const Var inner = sum(mul(y, tape.constant(v)));
    tape.backward(inner);
    const Matrix adjoint_v = tape.grad(vu);
    double rhs = 0;
    for (std::size_t i = 0; i < u.size(); ++i) rhs += u[i] * adjoint_v[i];
    CHECK(std::abs(inner.scalar() - rhs) < 1e-9);
  }
}

TEST_CASE("gru matches a reference recurrence") {
  const std::size_t L = 6, in = 3, h = 4;
  const Matrix x = rnd(L, in, 60), wih = rnd(3 * h, in, 61, 0.5), whh = rnd(3 * h, h, 62, 0.5);
  const Matrix bih = rnd(1, 3 * h, 63), bhh = rnd(1, 3 * h, 64);
  Tape tape;
  const Matrix out = gru(tape.constant(x), tape.constant(wih), tape.constant(whh),
                         tape.constant(bih), tape.constant(bhh))
                         .value();
  std::vector<double> state(h, 0.0);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::size_t t = 0; t < L; ++t) {
    std::vector<double> gi(3 * h), gh(3 * h);
    for (std::size_t g = 0; g < 3 * h; ++g) {
      gi[g] = bih(0, g);
      gh[g] = bhh(0, g);
      for (std::size_t k = 0; k < in; ++k) gi[g] += wih(g, k) * x(t, k);
      for (std::size_t k = 0; k < h; ++k) gh[g] += whh(g, k) * state[k];
    }
    std::vector<double> next(h);
    for (std::size_t j = 0; j < h; ++j) {
      const double r = sig(gi[j] + gh[j]);
      const double z = sig(gi[h + j] + gh[h + j]);
      const double n = std::tanh(gi[2 * h + j] + r * gh[2 * h + j]);
      next[j] = (1 - z) * n + z * state[j];
      CHECK(std::abs(out(t, j) - next[j]) < 1e-12);
    }
    state = next;
  }
  CHECK(audit({x, wih, whh, bih, bhh},
              [](auto v) { return gru(v[0], v[1], v[2], v[3], v[4]); }) < 1e-5);
}

TEST_CASE("multi-head attention matches a reference and passes the audit") {
  const std::size_t L = 5, d = 8, heads = 2, dh = d / heads;
  std::vector<Matrix> w;
  for (int i = 0; i < 4; ++i) {
    w.push_back(rnd(d, d, 70 + i, 0.4));
    w.push_back(rnd(1, d, 80 + i, 0.1));
  }
  const Matrix x = rnd(L, d, 90);
  Tape tape;
  AttentionWeights aw;
  std::vector<Var> vars;
  for (const auto& m : w) vars.push_back(tape.constant(m));
  aw = {vars[0], vars[1], vars[2], vars[3], vars[4], vars[5], vars[6], vars[7]};
  const Matrix out = multi_head_attention(tape.constant(x), aw, heads).value();

  auto project = [&](const Matrix& W, const Matrix& b) {
    Matrix y(L, d);
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t o = 0; o < d; ++o) {
        double acc = b(0, o);
        for (std::size_t k = 0; k < d; ++k) acc += x(t, k) * W(o, k);
        y(t, o) = acc;
      }
    return y;
  };
  const Matrix q = project(w[0], w[1]), k = project(w[2], w[3]), v = project(w[4], w[5]);
  Matrix ctx(L, d);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    for (std::size_t i = 0; i < L; ++i) {
      std::vector<double> s(L);
      double peak = -1e300;
      for (std::size_t j = 0; j < L; ++j) {
        double dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += q(i, hd * dh + c) * k(j, hd * dh + c);
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        peak = std::max(peak, s[j]);
      }
      double z = 0;
      for (double& e : s) z += (e = std::exp(e - peak));
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0;
        for (std::size_t j = 0; j < L; ++j) acc += s[j] / z * v(j, hd * dh + c);
        ctx(i, hd * dh + c) = acc;
      }
    }
  }
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t o = 0; o < d; ++o) {
      double acc = w[7](0, o);
      for (std::size_t c = 0; c < d; ++c) acc += ctx(t, c) * w[6](o, c);
      CHECK(std::abs(out(t, o) - acc) < 1e-12);
    }

  // Every input except the key bias, whose gradient is identically zero
  // (it shifts each score row by a constant); that one is checked directly.
  std::vector<Matrix> inputs{x};
  for (int i = 0; i < 8; ++i)
    if (i != 3) inputs.push_back(w[i]);
  const Matrix key_bias = w[3];
  CHECK(audit(inputs, [&](auto p) {
          Tape& t = *p[0].tape;
          const AttentionWeights a{p[1], p[2], p[3], t.constant(key_bias), p[4], p[5], p[6], p[7]};
          return multi_head_attention(p[0], a, heads);
        }) < 1e-5);

  Tape g;
  std::vector<Var> leaves;
  for (const auto& m : w) leaves.push_back(g.variable(m));
  const AttentionWeights gw{leaves[0], leaves[1], leaves[2], leaves[3],
                            leaves[4], leaves[5], leaves[6], leaves[7]};
  const Var out_g = multi_head_attention(g.variable(x), gw, heads);
  std::mt19937_64 r(99);
  g.backward(sum(mul(out_g, g.constant(oracle::random_matrix(L, d, r)))));
  for (double v : g.grad(leaves[3]).values()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("soft-DTW primitive") {
  const Matrix a = rnd(5, 3, 100), b = rnd(4, 3, 101);
  Tape tape;
  CHECK(soft_dtw(tape.constant(a), tape.constant(b), 5.0).scalar() ==
        doctest::Approx(align::soft_dtw(a, b, 5.0)).epsilon(1e-14));
  ParamSet p;
  p.add("a", a);
  p.add("b", b);
  const Program prog = [](Tape&, std::span<const Var> v) { return soft_dtw(v[0], v[1], 5.0); };
  CHECK(finite_diff_check(prog, p, 1e-6).max_rel_error < 1e-4);
}

TEST_CASE("bce with logits") {
  Tape tape;
  const std::vector<double> one{1.0};
  CHECK(bce_with_logits(tape.constant(Matrix(1, 1, 0.0)), one).scalar() ==
        doctest::Approx(std::log(2.0)));
  CHECK(bce_with_logits(tape.constant(Matrix(1, 1, 20.0)), one).scalar() < 1e-8);
  const std::vector<double> both{0.0, 1.0};
  CHECK(bce_with_logits(tape.constant(Matrix(1, 2, 0.0)), both).scalar() ==
        doctest::Approx(std::log(2.0)));
  CHECK(bce_with_logits(tape.constant(Matrix(1, 1, -800.0)), one).scalar() == doctest::Approx(800));
  const std::vector<double> bad{0.5};
  CHECK_THROWS_AS(bce_with_logits(tape.constant(Matrix(1, 1)), bad), Error);
  const std::vector<double> labels{1, 0, 0, 1, 1, 0};
  CHECK(audit({rnd(2, 3, 110, 3.0)}, [&](auto v) {
          return bce_with_logits(v[0], labels);
        }) < 1e-5);
}

TEST_CASE("linear composite") {
  CHECK(audit({rnd(4, 3, 120), rnd(5, 3, 121), rnd(1, 5, 122)},
              [](auto v) { return linear(v[0], v[1], v[2]); }) < 1e-5);
}
