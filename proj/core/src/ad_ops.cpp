#include "spectrum/ad_ops.hpp"

#include <algorithm>
#include <cmath>

#include "spectrum/alignment.hpp"
#include "spectrum/error.hpp"
#include "spectrum/spectral_core.hpp"

namespace spectrum::ad {
namespace {

using spectral::Complex;

void require(bool ok, const char* op, const char* what) {
  if (!ok) throw Error(std::string(op) + ": " + what);
}

void same_tape(Var a, Var b, const char* op) {
  require(a.tape != nullptr && a.tape == b.tape, op, "operands live on different tapes");
}

// grad_buffer for `input` if it participates in differentiation.
Matrix* sink(Tape& t, std::size_t input) {
  return t.requires_grad(input) ? &t.grad_buffer(input) : nullptr;
}

// out += op(a) * op(b)
void gemm_acc(Matrix& out, const Matrix& a, bool ta, const Matrix& b, bool tb) {
  const Matrix at = ta ? a.transposed() : Matrix();
  const Matrix bt = tb ? b.transposed() : Matrix();
  const Matrix& A = ta ? at : a;
  const Matrix& B = tb ? bt : b;
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.row(i).data();
    const double* arow = A.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = B.row(p).data();
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---- elementwise -----------------------------------------------------------

void bw_add(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  for (std::size_t in : n.inputs)
    if (Matrix* g = sink(t, in))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
}

void bw_sub(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  if (Matrix* g = sink(t, n.inputs[0]))
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
  if (Matrix* g = sink(t, n.inputs[1]))
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= n.grad[i];
}

void bw_mul(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  const Matrix& a = t.node(n.inputs[0]).value;
  const Matrix& b = t.node(n.inputs[1]).value;
  if (Matrix* g = sink(t, n.inputs[0]))
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * b[i];
  if (Matrix* g = sink(t, n.inputs[1]))
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * a[i];
}

void bw_add_row(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  if (Matrix* g = sink(t, n.inputs[0]))
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
  if (Matrix* g = sink(t, n.inputs[1]))
    for (std::size_t r = 0; r < n.grad.rows(); ++r)
      for (std::size_t c = 0; c < n.grad.cols(); ++c) (*g)[c] += n.grad(r, c);
}

void bw_add_col(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  if (Matrix* g = sink(t, n.inputs[0]))
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
  if (Matrix* g = sink(t, n.inputs[1]))
    for (std::size_t r = 0; r < n.grad.rows(); ++r)
      for (std::size_t c = 0; c < n.grad.cols(); ++c) (*g)[r] += n.grad(r, c);
}

void bw_scale(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  const double s = std::any_cast<double>(n.aux);
  if (Matrix* g = sink(t, n.inputs[0]))
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * n.grad[i];
}

void bw_add_scalar(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  if (Matrix* g = sink(t, n.inputs[0]))
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
}

struct MatmulAux {
  bool ta = false;
  bool tb = false;
};

void bw_matmul(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  const auto [ta, tb] = std::any_cast<MatmulAux>(n.aux);
  const Matrix& a = t.node(n.inputs[0]).value;
  const Matrix& b = t.node(n.inputs[1]).value;
  const Matrix& g = n.grad;
  if (Matrix* ga = sink(t, n.inputs[0])) {
    if (!ta) gemm_acc(*ga, g, false, b, !tb);  // dA = G op(B)^T
    else gemm_acc(*ga, b, tb, g, true);        // dA = op(B) G^T
  }
  if (Matrix* gb = sink(t, n.inputs[1])) {
    if (!tb) gemm_acc(*gb, a, !ta, g, false);  // dB = op(A)^T G
    else gemm_acc(*gb, g, true, a, ta);        // dB = G^T op(A)
  }
}

void bw_transpose(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  if (Matrix* g = sink(t, n.inputs[0]))
    for (std::size_t r = 0; r < n.grad.rows(); ++r)
      for (std::size_t c = 0; c < n.grad.cols(); ++c) (*g)(c, r) += n.grad(r, c);
}

void bw_sigmoid(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  if (Matrix* g = sink(t, n.inputs[0]))
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double y = n.value[i];
      (*g)[i] += n.grad[i] * y * (1.0 - y);
    }
}

void bw_tanh(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  if (Matrix* g = sink(t, n.inputs[0]))
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double y = n.value[i];
      (*g)[i] += n.grad[i] * (1.0 - y * y);
    }
}

void bw_relu(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  const Matrix& x = t.node(n.inputs[0]).value;
  if (Matrix* g = sink(t, n.inputs[0]))
    for (std::size_t i = 0; i < g->size(); ++i)
      if (x[i] > 0.0) (*g)[i] += n.grad[i];
}

void bw_softmax_rows(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  if (Matrix* g = sink(t, n.inputs[0])) {
    for (std::size_t r = 0; r < n.value.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n.value.cols(); ++c) dot += n.grad(r, c) * n.value(r, c);
      for (std::size_t c = 0; c < n.value.cols(); ++c)
        (*g)(r, c) += n.value(r, c) * (n.grad(r, c) - dot);
    }
  }
}

void bw_sum(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  if (Matrix* g = sink(t, n.inputs[0]))
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[0];
}

void bw_mean(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  if (Matrix* g = sink(t, n.inputs[0])) {
    const double w = n.grad[0] / static_cast<double>(g->size());
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += w;
  }
}

// ---- shape ----------------------------------------------------------------

struct PoolAux {
  std::size_t width = 0;
  std::size_t stride = 0;
};

void bw_avg_pool(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  const auto aux = std::any_cast<PoolAux>(n.aux);
  Matrix* g = sink(t, n.inputs[0]);
  if (g == nullptr) return;
  const std::size_t len = g->cols();
  for (std::size_t o = 0; o < n.grad.cols(); ++o) {
    const std::size_t begin = o * aux.stride;
    const std::size_t end = std::min(begin + aux.width, len);
    const double w = 1.0 / static_cast<double>(end - begin);
    for (std::size_t r = 0; r < n.grad.rows(); ++r)
      for (std::size_t c = begin; c < end; ++c) (*g)(r, c) += w * n.grad(r, o);
  }
}

void bw_concat_cols(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  std::size_t offset = 0;
  for (std::size_t in : n.inputs) {
    const std::size_t w = t.node(in).value.cols();
    if (Matrix* g = sink(t, in))
      for (std::size_t r = 0; r < g->rows(); ++r)
        for (std::size_t c = 0; c < w; ++c) (*g)(r, c) += n.grad(r, offset + c);
    offset += w;
  }
}

void bw_slice_cols(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  const auto start = std::any_cast<std::size_t>(n.aux);
  if (Matrix* g = sink(t, n.inputs[0]))
    for (std::size_t r = 0; r < n.grad.rows(); ++r)
      for (std::size_t c = 0; c < n.grad.cols(); ++c) (*g)(r, start + c) += n.grad(r, c);
}

void bw_gather_cols(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  const auto& index = std::any_cast<const std::vector<std::size_t>&>(n.aux);
  if (Matrix* g = sink(t, n.inputs[0]))
    for (std::size_t r = 0; r < n.grad.rows(); ++r)
      for (std::size_t c = 0; c < index.size(); ++c) (*g)(r, index[c]) += n.grad(r, c);
}

// ---- convolution -----------------------------------------------------------

struct ConvAux {
  std::size_t kernel = 0;
  std::size_t stride = 0;
  std::size_t padding = 0;
};

void bw_conv1d(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  const auto aux = std::any_cast<ConvAux>(n.aux);
  const Matrix& x = t.node(n.inputs[0]).value;
  const Matrix& w = t.node(n.inputs[1]).value;
  Matrix* gx = sink(t, n.inputs[0]);
  Matrix* gw = sink(t, n.inputs[1]);
  Matrix* gb = sink(t, n.inputs[2]);
  const std::size_t cin = x.rows(), len = x.cols(), k = aux.kernel;
  for (std::size_t o = 0; o < n.grad.rows(); ++o) {
    for (std::size_t tt = 0; tt < n.grad.cols(); ++tt) {
      const double g = n.grad(o, tt);
      if (gb != nullptr) (*gb)(o, 0) += g;
      if (g == 0.0) continue;
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt * aux.stride + j) -
                                     static_cast<std::ptrdiff_t>(aux.padding);
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          const auto s = static_cast<std::size_t>(src);
          if (gw != nullptr) (*gw)(o, c * k + j) += g * x(c, s);
          if (gx != nullptr) (*gx)(c, s) += g * w(o, c * k + j);
        }
      }
    }
  }
}

// ---- spectral --------------------------------------------------------------

void bw_rdft(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  Matrix* gx = sink(t, n.inputs[0]);
  if (gx == nullptr) return;
  const std::size_t len = gx->cols();
  const std::size_t h = spectral::half_bins(len);
  std::vector<Complex> buf(len);
  for (std::size_t r = 0; r < gx->rows(); ++r) {
    std::fill(buf.begin(), buf.end(), Complex{});
    for (std::size_t k = 0; k < h; ++k) buf[k] = {n.grad(r, k), n.grad(r, h + k)};
    if (len % 2 == 0) buf[len / 2] += Complex{n.grad(r, 2 * h), 0.0};
    const auto back = spectral::fft(buf, spectral::Direction::inverse);
    for (std::size_t i = 0; i < len; ++i) (*gx)(r, i) += back[i].real();
  }
}

void bw_irdft(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  Matrix* gs = sink(t, n.inputs[0]);
  if (gs == nullptr) return;
  const auto len = std::any_cast<std::size_t>(n.aux);
  const std::size_t h = spectral::half_bins(len);
  const double inv_n = 1.0 / static_cast<double>(len);
  std::vector<Complex> buf(len);
  for (std::size_t r = 0; r < n.grad.rows(); ++r) {
    for (std::size_t i = 0; i < len; ++i) buf[i] = {n.grad(r, i), 0.0};
    const auto spec = spectral::fft(buf, spectral::Direction::forward);
    (*gs)(r, 0) += spec[0].real() * inv_n;
    for (std::size_t k = 1; k < h; ++k) {
      (*gs)(r, k) += 2.0 * spec[k].real() * inv_n;
      (*gs)(r, h + k) += 2.0 * spec[k].imag() * inv_n;
    }
    if (len % 2 == 0) (*gs)(r, 2 * h) += spec[len / 2].real() * inv_n;
  }
}

struct InterpAux {
  std::vector<spectral::InterpTap> taps;
  std::size_t from = 0;
};

void bw_interp(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  const auto& aux = std::any_cast<const InterpAux&>(n.aux);
  Matrix* g = sink(t, n.inputs[0]);
  if (g == nullptr) return;
  const std::size_t to = aux.taps.size();
  for (std::size_t r = 0; r < n.grad.rows(); ++r) {
    for (std::size_t part = 0; part < 2; ++part) {
      for (std::size_t j = 0; j < to; ++j) {
        const auto& tap = aux.taps[j];
        const double v = n.grad(r, part * to + j);
        (*g)(r, part * aux.from + tap.lo) += (1.0 - tap.frac) * v;
        (*g)(r, part * aux.from + tap.hi) += tap.frac * v;
      }
    }
  }
}

void bw_modulate(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  const auto len = std::any_cast<std::size_t>(n.aux);
  const std::size_t h = spectral::half_bins(len);
  const Matrix& s = t.node(n.inputs[0]).value;
  const Matrix& w = t.node(n.inputs[1]).value;
  Matrix* gs = sink(t, n.inputs[0]);
  Matrix* gw = sink(t, n.inputs[1]);
  for (std::size_t r = 0; r < n.grad.rows(); ++r) {
    for (std::size_t k = 0; k < h; ++k) {
      const double g_re = n.grad(r, k), g_im = n.grad(r, h + k);
      const double sr = s(r, k), si = s(r, h + k);
      const double wr = w(r, k), wi = w(r, h + k);
      if (gs != nullptr) {
        (*gs)(r, k) += g_re * wr + g_im * wi;
        (*gs)(r, h + k) += -g_re * wi + g_im * wr;
      }
      if (gw != nullptr) {
        (*gw)(r, k) += g_re * sr + g_im * si;
        (*gw)(r, h + k) += -g_re * si + g_im * sr;
      }
    }
    if (len % 2 == 0) {
      const double g_nyq = n.grad(r, 2 * h);
      if (gs != nullptr) (*gs)(r, 2 * h) += g_nyq * w(r, h - 1);
      if (gw != nullptr) (*gw)(r, h - 1) += g_nyq * s(r, 2 * h);
    }
  }
}

// ---- recurrent -------------------------------------------------------------

struct GruAux {
  Matrix reset, update, cand, hidden_lin;  // L x h each
};

void bw_gru(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  const auto& c = std::any_cast<const GruAux&>(n.aux);
  const Matrix& x = t.node(n.inputs[0]).value;
  const Matrix& w_ih = t.node(n.inputs[1]).value;
  const Matrix& w_hh = t.node(n.inputs[2]).value;
  Matrix* gx = sink(t, n.inputs[0]);
  Matrix* gwih = sink(t, n.inputs[1]);
  Matrix* gwhh = sink(t, n.inputs[2]);
  Matrix* gbih = sink(t, n.inputs[3]);
  Matrix* gbhh = sink(t, n.inputs[4]);
  const std::size_t len = x.rows(), in = x.cols(), h = w_hh.cols();
  std::vector<double> dh_next(h, 0.0), dh(h), gi(3 * h), gh(3 * h), hprev(h);
  for (std::size_t step = len; step-- > 0;) {
    for (std::size_t j = 0; j < h; ++j) {
      dh[j] = n.grad(step, j) + dh_next[j];
      hprev[j] = step == 0 ? 0.0 : n.value(step - 1, j);
    }
    for (std::size_t j = 0; j < h; ++j) {
      const double r = c.reset(step, j), z = c.update(step, j), nn = c.cand(step, j);
      const double dn = dh[j] * (1.0 - z);
      const double dz = dh[j] * (hprev[j] - nn);
      const double dan = dn * (1.0 - nn * nn);
      const double dr = dan * c.hidden_lin(step, j);
      const double daz = dz * z * (1.0 - z);
      const double dar = dr * r * (1.0 - r);
      gi[j] = dar;
      gi[h + j] = daz;
      gi[2 * h + j] = dan;
      gh[j] = dar;
      gh[h + j] = daz;
      gh[2 * h + j] = dan * r;
      dh_next[j] = dh[j] * z;
    }
    for (std::size_t g = 0; g < 3 * h; ++g) {
      if (gbih != nullptr) (*gbih)[g] += gi[g];
      if (gbhh != nullptr) (*gbhh)[g] += gh[g];
      if (gwih != nullptr)
        for (std::size_t k = 0; k < in; ++k) (*gwih)(g, k) += gi[g] * x(step, k);
      if (gx != nullptr)
        for (std::size_t k = 0; k < in; ++k) (*gx)(step, k) += gi[g] * w_ih(g, k);
      if (gwhh != nullptr && step > 0)
        for (std::size_t k = 0; k < h; ++k) (*gwhh)(g, k) += gh[g] * hprev[k];
      for (std::size_t k = 0; k < h; ++k) dh_next[k] += gh[g] * w_hh(g, k);
    }
  }
}

// ---- alignment and losses --------------------------------------------------

struct SoftDtwAux {
  double gamma = 1.0;
  Matrix costs;
  Matrix table;
};

void bw_soft_dtw(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  const auto& aux = std::any_cast<const SoftDtwAux&>(n.aux);
  const Matrix& a = t.node(n.inputs[0]).value;
  const Matrix& b = t.node(n.inputs[1]).value;
  Matrix* ga = sink(t, n.inputs[0]);
  Matrix* gb = sink(t, n.inputs[1]);
  const Matrix e = align::expected_alignment(aux.costs, aux.table, aux.gamma);
  const double up = n.grad[0];
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double w = up * e(i, j);
      if (w == 0.0) continue;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        const double diff = 2.0 * w * (a(i, k) - b(j, k));
        if (ga != nullptr) (*ga)(i, k) += diff;
        if (gb != nullptr) (*gb)(j, k) -= diff;
      }
    }
}

void bw_bce(Tape& t, std::size_t id) {
  const Node& n = t.node(id);
  const auto& labels = std::any_cast<const std::vector<double>&>(n.aux);
  const Matrix& z = t.node(n.inputs[0]).value;
  if (Matrix* g = sink(t, n.inputs[0])) {
    const double w = n.grad[0] / static_cast<double>(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) (*g)[i] += w * (stable_sigmoid(z[i]) - labels[i]);
  }
}

Matrix map_values(const Matrix& in, double (*f)(double)) {
  Matrix out = in;
  for (double& v : out.values()) v = f(v);
  return out;
}

}  // namespace

void register_builtin_primitives() {
  register_primitive("add", &bw_add);
  register_primitive("sub", &bw_sub);
  register_primitive("mul", &bw_mul);
  register_primitive("add_row", &bw_add_row);
  register_primitive("add_col", &bw_add_col);
  register_primitive("scale", &bw_scale);
  register_primitive("add_scalar", &bw_add_scalar);
  register_primitive("matmul", &bw_matmul);
  register_primitive("transpose", &bw_transpose);
  register_primitive("sigmoid", &bw_sigmoid);
  register_primitive("tanh", &bw_tanh);
  register_primitive("relu", &bw_relu);
  register_primitive("softmax_rows", &bw_softmax_rows);
  register_primitive("sum", &bw_sum);
  register_primitive("mean", &bw_mean);
  register_primitive("avg_pool", &bw_avg_pool);
  register_primitive("concat_cols", &bw_concat_cols);
  register_primitive("slice_cols", &bw_slice_cols);
  register_primitive("gather_cols", &bw_gather_cols);
  register_primitive("conv1d", &bw_conv1d);
  register_primitive("rdft", &bw_rdft);
  register_primitive("irdft", &bw_irdft);
  register_primitive("interp_weights", &bw_interp);
  register_primitive("spectral_modulate", &bw_modulate);
  register_primitive("gru", &bw_gru);
  register_primitive("soft_dtw", &bw_soft_dtw);
  register_primitive("bce_logits", &bw_bce);
}

Var add(Var a, Var b) {
  same_tape(a, b, "add");
  require(a.value().same_shape(b.value()), "add", "shape mismatch");
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.value()[i];
  return a.tape->record("add", std::move(v), {a.id, b.id});
}

Var sub(Var a, Var b) {
  same_tape(a, b, "sub");
  require(a.value().same_shape(b.value()), "sub", "shape mismatch");
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= b.value()[i];
  return a.tape->record("sub", std::move(v), {a.id, b.id});
}

Var mul(Var a, Var b) {
  same_tape(a, b, "mul");
  require(a.value().same_shape(b.value()), "mul", "shape mismatch");
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b.value()[i];
  return a.tape->record("mul", std::move(v), {a.id, b.id});
}

Var add_row(Var a, Var row) {
  same_tape(a, row, "add_row");
  const Matrix& r = row.value();
  require(r.rows() == 1 && r.cols() == a.cols(), "add_row", "row must be 1 x cols");
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) += r[j];
  return a.tape->record("add_row", std::move(v), {a.id, row.id});
}

Var add_col(Var a, Var col) {
  same_tape(a, col, "add_col");
  const Matrix& c = col.value();
  require(c.cols() == 1 && c.rows() == a.rows(), "add_col", "column must be rows x 1");
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) += c[i];
  return a.tape->record("add_col", std::move(v), {a.id, col.id});
}

Var scale(Var a, double s) {
  Matrix v = a.value();
  for (double& x : v.values()) x *= s;
  return a.tape->record("scale", std::move(v), {a.id}, s);
}

Var add_scalar(Var a, double s) {
  Matrix v = a.value();
  for (double& x : v.values()) x += s;
  return a.tape->record("add_scalar", std::move(v), {a.id}, s);
}

Var matmul(Var a, Var b, bool transpose_a, bool transpose_b) {
  same_tape(a, b, "matmul");
  const std::size_t n = transpose_a ? a.cols() : a.rows();
  const std::size_t k = transpose_a ? a.rows() : a.cols();
  const std::size_t kb = transpose_b ? b.cols() : b.rows();
  const std::size_t m = transpose_b ? b.rows() : b.cols();
  require(k == kb, "matmul", "inner dimensions differ");
  Matrix v(n, m);
  gemm_acc(v, a.value(), transpose_a, b.value(), transpose_b);
  return a.tape->record("matmul", std::move(v), {a.id, b.id}, MatmulAux{transpose_a, transpose_b});
}

Var transpose(Var a) { return a.tape->record("transpose", a.value().transposed(), {a.id}); }

Var sigmoid(Var a) { return a.tape->record("sigmoid", map_values(a.value(), &stable_sigmoid), {a.id}); }

Var tanh(Var a) {
  return a.tape->record("tanh", map_values(a.value(), [](double x) { return std::tanh(x); }), {a.id});
}

Var relu(Var a) {
  return a.tape->record("relu", map_values(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }),
                        {a.id});
}

Var softmax_rows(Var a) {
  Matrix v = a.value();
  for (std::size_t r = 0; r < v.rows(); ++r) {
    auto row = v.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double& x : row) {
      x = std::exp(x - m);
      s += x;
    }
    for (double& x : row) x /= s;
  }
  return a.tape->record("softmax_rows", std::move(v), {a.id});
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return a.tape->record("sum", Matrix(1, 1, s), {a.id});
}

Var mean(Var a) {
  require(a.value().size() > 0, "mean", "empty input");
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return a.tape->record("mean", Matrix(1, 1, s / static_cast<double>(a.value().size())), {a.id});
}

Var mean_of(std::span<const Var> xs) {
  require(!xs.empty(), "mean_of", "no inputs");
  Var acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return xs.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(xs.size()));
}

Var avg_pool_cols(Var a, std::size_t width, std::size_t stride) {
  require(width >= 1 && stride >= 1, "avg_pool", "width and stride must be positive");
  const Matrix& x = a.value();
  const std::size_t len = x.cols();
  require(len >= 1, "avg_pool", "empty input");
  const std::size_t out_len = len <= width ? 1 : (len - width + stride - 1) / stride + 1;
  Matrix v(x.rows(), out_len);
  for (std::size_t o = 0; o < out_len; ++o) {
    const std::size_t begin = o * stride;
    const std::size_t end = std::min(begin + width, len);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = begin; c < end; ++c) s += x(r, c);
      v(r, o) = s / static_cast<double>(end - begin);
    }
  }
  return a.tape->record("avg_pool", std::move(v), {a.id}, PoolAux{width, stride});
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    same_tape(parts[0], p, "concat_cols");
    require(p.rows() == rows, "concat_cols", "row counts differ");
    cols += p.cols();
    ids.push_back(p.id);
  }
  Matrix v(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Matrix& m = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < m.cols(); ++c) v(r, offset + c) = m(r, c);
    offset += m.cols();
  }
  return parts[0].tape->record("concat_cols", std::move(v), std::move(ids));
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  require(start + count <= a.cols(), "slice_cols", "range out of bounds");
  const Matrix& x = a.value();
  Matrix v(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) v(r, c) = x(r, start + c);
  return a.tape->record("slice_cols", std::move(v), {a.id}, start);
}

Var gather_cols(Var a, std::vector<std::size_t> index) {
  const Matrix& x = a.value();
  Matrix v(x.rows(), index.size());
  for (std::size_t c = 0; c < index.size(); ++c) {
    require(index[c] < x.cols(), "gather_cols", "index out of bounds");
    for (std::size_t r = 0; r < x.rows(); ++r) v(r, c) = x(r, index[c]);
  }
  return a.tape->record("gather_cols", std::move(v), {a.id}, std::move(index));
}

Var conv1d(Var x, Var weight, Var bias, std::size_t kernel, std::size_t stride,
           std::size_t padding) {
  same_tape(x, weight, "conv1d");
  same_tape(x, bias, "conv1d");
  require(kernel >= 1 && stride >= 1, "conv1d", "kernel and stride must be positive");
  const Matrix& in = x.value();
  const Matrix& w = weight.value();
  const Matrix& b = bias.value();
  const std::size_t cin = in.rows(), len = in.cols(), cout = w.rows();
  require(w.cols() == cin * kernel, "conv1d", "weight must be out x (in * kernel)");
  require(b.rows() == cout && b.cols() == 1, "conv1d", "bias must be out x 1");
  require(len + 2 * padding >= kernel, "conv1d", "input shorter than kernel");
  const std::size_t out_len = (len + 2 * padding - kernel) / stride + 1;
  Matrix v(cout, out_len);
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t t = 0; t < out_len; ++t) {
      double s = b(o, 0);
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t j = 0; j < kernel; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) -
                                     static_cast<std::ptrdiff_t>(padding);
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          s += w(o, c * kernel + j) * in(c, static_cast<std::size_t>(src));
        }
      }
      v(o, t) = s;
    }
  }
  return x.tape->record("conv1d", std::move(v), {x.id, weight.id, bias.id},
                        ConvAux{kernel, stride, padding});
}

Var rdft(Var x) { return x.tape->record("rdft", spectral::pack(spectral::rdft(x.value())), {x.id}); }

Var irdft(Var packed, std::size_t length) {
  Matrix v = spectral::irdft(spectral::unpack(packed.value(), length));
  return packed.tape->record("irdft", std::move(v), {packed.id}, length);
}

Var interpolate_weights(Var packed_weights, std::size_t target) {
  const Matrix& w = packed_weights.value();
  require(w.cols() % 2 == 0 && w.cols() >= 4, "interp_weights",
          "packed weights must be d x 2l with l >= 2");
  const std::size_t from = w.cols() / 2;
  InterpAux aux{spectral::interpolation_taps(from, target), from};
  Matrix v(w.rows(), 2 * target);
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t part = 0; part < 2; ++part)
      for (std::size_t j = 0; j < target; ++j) {
        const auto& tap = aux.taps[j];
        v(r, part * target + j) = (1.0 - tap.frac) * w(r, part * from + tap.lo) +
                                  tap.frac * w(r, part * from + tap.hi);
      }
  return packed_weights.tape->record("interp_weights", std::move(v), {packed_weights.id},
                                     std::move(aux));
}

Var spectral_modulate(Var packed_spectrum, Var packed_weights, std::size_t length) {
  same_tape(packed_spectrum, packed_weights, "spectral_modulate");
  const std::size_t h = spectral::half_bins(length);
  require(packed_weights.cols() == 2 * h && packed_weights.rows() == packed_spectrum.rows(),
          "spectral_modulate", "weights must be d x 2H");
  const spectral::HalfSpectrum spec = spectral::unpack(packed_spectrum.value(), length);
  const Matrix& w = packed_weights.value();
  spectral::ComplexMatrix cw{Matrix(w.rows(), h), Matrix(w.rows(), h)};
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t k = 0; k < h; ++k) {
      cw.re(r, k) = w(r, k);
      cw.im(r, k) = w(r, h + k);
    }
  return packed_spectrum.tape->record("spectral_modulate",
                                      spectral::pack(spectral::modulate(spec, cw)),
                                      {packed_spectrum.id, packed_weights.id}, length);
}

Var gru(Var x, Var w_ih, Var w_hh, Var b_ih, Var b_hh) {
  for (Var v : {w_ih, w_hh, b_ih, b_hh}) same_tape(x, v, "gru");
  const Matrix& in = x.value();
  const Matrix& wi = w_ih.value();
  const Matrix& wh = w_hh.value();
  const Matrix& bi = b_ih.value();
  const Matrix& bh = b_hh.value();
  const std::size_t h = wh.cols();
  require(wh.rows() == 3 * h, "gru", "w_hh must be 3h x h");
  require(wi.rows() == 3 * h && wi.cols() == in.cols(), "gru", "w_ih must be 3h x in");
  require(bi.size() == 3 * h && bh.size() == 3 * h, "gru", "biases must have 3h entries");
  const std::size_t len = in.rows();
  GruAux aux{Matrix(len, h), Matrix(len, h), Matrix(len, h), Matrix(len, h)};
  Matrix out(len, h);
  std::vector<double> hprev(h, 0.0), gi(3 * h), gh(3 * h);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t g = 0; g < 3 * h; ++g) {
      double si = bi[g], sh = bh[g];
      for (std::size_t k = 0; k < in.cols(); ++k) si += wi(g, k) * in(t, k);
      for (std::size_t k = 0; k < h; ++k) sh += wh(g, k) * hprev[k];
      gi[g] = si;
      gh[g] = sh;
    }
    for (std::size_t j = 0; j < h; ++j) {
      const double r = stable_sigmoid(gi[j] + gh[j]);
      const double z = stable_sigmoid(gi[h + j] + gh[h + j]);
      const double nn = std::tanh(gi[2 * h + j] + r * gh[2 * h + j]);
      aux.reset(t, j) = r;
      aux.update(t, j) = z;
      aux.cand(t, j) = nn;
      aux.hidden_lin(t, j) = gh[2 * h + j];
      out(t, j) = (1.0 - z) * nn + z * hprev[j];
    }
    for (std::size_t j = 0; j < h; ++j) hprev[j] = out(t, j);
  }
  return x.tape->record("gru", std::move(out), {x.id, w_ih.id, w_hh.id, b_ih.id, b_hh.id},
                        std::move(aux));
}

Var soft_dtw(Var a, Var b, double gamma) {
  same_tape(a, b, "soft_dtw");
  SoftDtwAux aux{gamma, align::cost_matrix(a.value(), b.value()), Matrix()};
  aux.table = align::soft_dtw_table(aux.costs, gamma);
  const double value = aux.table(a.rows(), b.rows());
  return a.tape->record("soft_dtw", Matrix(1, 1, value), {a.id, b.id}, std::move(aux));
}

Var bce_with_logits(Var logits, std::span<const double> labels) {
  const Matrix& z = logits.value();
  require(z.size() == labels.size() && !labels.empty(), "bce_logits",
          "need one label per logit");
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double y = labels[i];
    require(y == 0.0 || y == 1.0, "bce_logits", "labels must be 0 or 1");
    // softplus(z) - y z, written to avoid overflow for large |z|
    s += std::max(z[i], 0.0) - y * z[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  return logits.tape->record("bce_logits", Matrix(1, 1, s / static_cast<double>(z.size())),
                             {logits.id}, std::vector<double>(labels.begin(), labels.end()));
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight, false, true), bias); }

Var multi_head_attention(Var x, const AttentionWeights& w, std::size_t heads) {
  const std::size_t d = x.cols();
  require(heads >= 1 && d % heads == 0, "multi_head_attention", "width must divide by heads");
  const std::size_t dh = d / heads;
  const Var q = linear(x, w.wq, w.bq);
  const Var k = linear(x, w.wk, w.bk);
  const Var v = linear(x, w.wv, w.bv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = slice_cols(q, h * dh, dh);
    const Var kh = slice_cols(k, h * dh, dh);
    const Var vh = slice_cols(v, h * dh, dh);
    const Var attn = softmax_rows(scale(matmul(qh, kh, false, true), inv_sqrt));
    outs.push_back(matmul(attn, vh));
  }
  const Var merged = heads == 1 ? outs[0] : concat_cols(outs);
  return linear(merged, w.wo, w.bo);
}

}  // namespace spectrum::ad
