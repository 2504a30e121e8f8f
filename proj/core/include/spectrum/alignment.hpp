#pragma once

#include "spectrum/matrix.hpp"

namespace spectrum::align {

/// Pairwise squared Euclidean distances between the rows of a (La x d) and
/// b (Lb x d).
Matrix cost_matrix(const Matrix& a, const Matrix& b);

/// Classic DTW with steps (i-1, j), (i, j-1), (i-1, j-1); no path normalisation.
double dtw(const Matrix& a, const Matrix& b);
double dtw_from_costs(const Matrix& costs);

/// -gamma * log(exp(-a/gamma) + exp(-b/gamma) + exp(-c/gamma)), shifted by the minimum.
double softmin(double a, double b, double c, double gamma);

/// Soft-DTW accumulated cost table R of shape (La+1) x (Lb+1); R(0,0) = 0 and
/// the rest of row/column 0 is +inf. The discrepancy is R(La, Lb).
Matrix soft_dtw_table(const Matrix& costs, double gamma);

double soft_dtw(const Matrix& a, const Matrix& b, double gamma);

/// Expected alignment E (La x Lb): the gradient of soft-DTW with respect to
/// the cost matrix, computed by the backward recursion over R.
Matrix expected_alignment(const Matrix& costs, const Matrix& table, double gamma);

struct SoftDtwGradient {
  double value = 0.0;
  Matrix grad_a;     ///< La x d
  Matrix grad_b;     ///< Lb x d
  Matrix alignment;  ///< La x Lb expected alignment
};

/// Value and gradients of soft_dtw(a, b, gamma) with respect to both inputs.
SoftDtwGradient soft_dtw_grad(const Matrix& a, const Matrix& b, double gamma);

}  // namespace spectrum::align
