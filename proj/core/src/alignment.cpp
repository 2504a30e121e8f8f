#include "spectrum/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spectrum/error.hpp"

namespace spectrum::align {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_pair(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw Error("alignment: sequences must be non-empty");
  if (a.cols() != b.cols()) throw Error("alignment: feature dimensions differ");
}

void check_gamma(double gamma) {
  if (!(gamma > 0.0)) throw Error("soft-DTW: gamma must be positive");
}

}  // namespace

Matrix cost_matrix(const Matrix& a, const Matrix& b) {
  check_pair(a, b);
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ra = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto rb = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ra.size(); ++k) {
        const double d = ra[k] - rb[k];
        s += d * d;
      }
      c(i, j) = s;
    }
  }
  return c;
}

double dtw_from_costs(const Matrix& costs) {
  const std::size_t la = costs.rows();
  const std::size_t lb = costs.cols();
  std::vector<double> prev(lb + 1, kInf), cur(lb + 1, kInf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= la; ++i) {
    cur[0] = kInf;
    for (std::size_t j = 1; j <= lb; ++j)
      cur[j] = costs(i - 1, j - 1) + std::min({prev[j - 1], prev[j], cur[j - 1]});
    std::swap(prev, cur);
  }
  return prev[lb];
}

double dtw(const Matrix& a, const Matrix& b) { return dtw_from_costs(cost_matrix(a, b)); }

double softmin(double a, double b, double c, double gamma) {
  const double m = std::min({a, b, c});
  if (m == kInf) return kInf;
  const double s = std::exp(-(a - m) / gamma) + std::exp(-(b - m) / gamma) +
                   std::exp(-(c - m) / gamma);
  return m - gamma * std::log(s);
}

Matrix soft_dtw_table(const Matrix& costs, double gamma) {
  check_gamma(gamma);
  const std::size_t la = costs.rows();
  const std::size_t lb = costs.cols();
  Matrix r(la + 1, lb + 1, kInf);
  r(0, 0) = 0.0;
  for (std::size_t i = 1; i <= la; ++i)
    for (std::size_t j = 1; j <= lb; ++j)
      r(i, j) = costs(i - 1, j - 1) + softmin(r(i - 1, j - 1), r(i - 1, j), r(i, j - 1), gamma);
  return r;
}

double soft_dtw(const Matrix& a, const Matrix& b, double gamma) {
  const Matrix r = soft_dtw_table(cost_matrix(a, b), gamma);
  return r(a.rows(), b.rows());
}

Matrix expected_alignment(const Matrix& costs, const Matrix& table, double gamma) {
  check_gamma(gamma);
  const std::size_t la = costs.rows();
  const std::size_t lb = costs.cols();
  // Padded copies indexed 0 .. La+1 / Lb+1.
  Matrix d(la + 2, lb + 2, 0.0);
  Matrix r(la + 2, lb + 2, -kInf);
  Matrix e(la + 2, lb + 2, 0.0);
  for (std::size_t i = 1; i <= la; ++i)
    for (std::size_t j = 1; j <= lb; ++j) {
      d(i, j) = costs(i - 1, j - 1);
      r(i, j) = table(i, j);
    }
  r(la + 1, lb + 1) = table(la, lb);
  e(la + 1, lb + 1) = 1.0;
  for (std::size_t j = lb; j >= 1; --j) {
    for (std::size_t i = la; i >= 1; --i) {
      const double wa = std::exp((r(i + 1, j) - r(i, j) - d(i + 1, j)) / gamma);
      const double wb = std::exp((r(i, j + 1) - r(i, j) - d(i, j + 1)) / gamma);
      const double wc = std::exp((r(i + 1, j + 1) - r(i, j) - d(i + 1, j + 1)) / gamma);
      e(i, j) = e(i + 1, j) * wa + e(i, j + 1) * wb + e(i + 1, j + 1) * wc;
    }
  }
  Matrix out(la, lb);
  for (std::size_t i = 0; i < la; ++i)
    for (std::size_t j = 0; j < lb; ++j) out(i, j) = e(i + 1, j + 1);
  return out;
}

SoftDtwGradient soft_dtw_grad(const Matrix& a, const Matrix& b, double gamma) {
  check_gamma(gamma);
  const Matrix costs = cost_matrix(a, b);
  const Matrix table = soft_dtw_table(costs, gamma);
  SoftDtwGradient out;
  out.value = table(a.rows(), b.rows());
  out.alignment = expected_alignment(costs, table, gamma);
  out.grad_a = Matrix(a.rows(), a.cols());
  out.grad_b = Matrix(b.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double w = out.alignment(i, j);
      if (w == 0.0) continue;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        const double diff = 2.0 * w * (a(i, k) - b(j, k));
        out.grad_a(i, k) += diff;
        out.grad_b(j, k) -= diff;
      }
    }
  }
  return out;
}

}  // namespace spectrum::align
