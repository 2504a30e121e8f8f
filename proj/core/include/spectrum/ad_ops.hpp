#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "spectrum/diff_engine.hpp"

// Differentiable primitives recorded on an ad::Tape. Every function here
// registers exactly one backward rule under the name given in its comment.
namespace spectrum::ad {

Var add(Var a, Var b);                   // "add"
Var sub(Var a, Var b);                   // "sub"
Var mul(Var a, Var b);                   // "mul", elementwise
Var add_row(Var a, Var row);             // "add_row", row is 1 x cols, broadcast down
Var add_col(Var a, Var col);             // "add_col", col is rows x 1, broadcast across
Var scale(Var a, double s);              // "scale"
Var add_scalar(Var a, double s);         // "add_scalar"
Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);  // "matmul"
Var transpose(Var a);                    // "transpose"

Var sigmoid(Var a);                      // "sigmoid"
Var tanh(Var a);                         // "tanh"
Var relu(Var a);                         // "relu"
Var softmax_rows(Var a);                 // "softmax_rows", normalises each row

Var sum(Var a);                          // "sum", 1 x 1
Var mean(Var a);                         // "mean", 1 x 1
/// Average of equally shaped arrays.
Var mean_of(std::span<const Var> xs);

/// Mean pooling along columns; a trailing partial window averages what it covers.
Var avg_pool_cols(Var a, std::size_t width, std::size_t stride);  // "avg_pool"
Var concat_cols(std::span<const Var> parts);                      // "concat_cols"
Var slice_cols(Var a, std::size_t start, std::size_t count);      // "slice_cols"
/// out(:, j) = a(:, index[j]); repeated indices accumulate in backward.
Var gather_cols(Var a, std::vector<std::size_t> index);           // "gather_cols"

/// 1-D convolution over columns of x (channels x length).
/// weight: out_ch x (in_ch * kernel), bias: out_ch x 1.
Var conv1d(Var x, Var weight, Var bias, std::size_t kernel, std::size_t stride,
           std::size_t padding);                                  // "conv1d"

/// Row-wise half spectrum in packed layout (see spectral::pack).
Var rdft(Var x);                                                  // "rdft"
/// Inverse of the packed half spectrum of a length-`length` signal.
Var irdft(Var packed, std::size_t length);                        // "irdft"
/// Linear resize of packed complex weights [re | im] (d x 2l) to d x 2*target.
Var interpolate_weights(Var packed_weights, std::size_t target);  // "interp_weights"
/// Complex pointwise product of a packed spectrum with d x 2H packed weights.
Var spectral_modulate(Var packed_spectrum, Var packed_weights, std::size_t length);  // "spectral_modulate"

/// Single-layer GRU over rows of x (L x in); returns every hidden state (L x hidden).
/// Gate blocks are stacked [reset; update; candidate] in w_ih (3h x in),
/// w_hh (3h x h), b_ih and b_hh (1 x 3h). Initial state is zero.
Var gru(Var x, Var w_ih, Var w_hh, Var b_ih, Var b_hh);         // "gru"

/// Soft-DTW discrepancy between the rows of a and b (squared Euclidean cost).
Var soft_dtw(Var a, Var b, double gamma);                         // "soft_dtw"

/// Mean binary cross-entropy of logits (any shape) against 0/1 labels.
Var bce_with_logits(Var logits, std::span<const double> labels);  // "bce_logits"

/// x W^T + b with W: out x in and b: 1 x out, x: n x in.
Var linear(Var x, Var weight, Var bias);

struct AttentionWeights {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};

/// Scaled dot-product multi-head self-attention over the rows of x (L x d),
/// without the residual connection.
Var multi_head_attention(Var x, const AttentionWeights& w, std::size_t heads);

}  // namespace spectrum::ad
