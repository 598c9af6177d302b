#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "punc/tensor.hpp"

// Differentiable primitives. Every function records its output on the tape
// (when any input requires a gradient and the tape is recording) and raises
// ShapeError / NumericError on invalid shapes or non-finite results.
namespace punc::ad {

enum class Axis {
  kAll,   // reduce everything to a scalar {1}
  kRows,  // reduce down each column -> {1 x cols}
  kCols,  // reduce across each row  -> {rows x 1}
};

// a [m x k] times b [k x n]; with transpose_b, b is [n x k].
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b, bool transpose_b = false);

// Elementwise with broadcasting of b: same shape, a row {1 x n} / {n}, a
// column {m x 1}, or a scalar {1}.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);

Tensor concat_cols(Tape& tape, std::span<const Tensor> parts);
Tensor concat_rows(Tape& tape, std::span<const Tensor> parts);
Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t begin, std::size_t count);
Tensor reshape(Tape& tape, const Tensor& a, Shape shape);

Tensor tanh(Tape& tape, const Tensor& a);
Tensor sigmoid(Tape& tape, const Tensor& a);
Tensor relu(Tape& tape, const Tensor& a);
// Clamps into [lo, hi]; the gradient is zero where clamping was active.
Tensor clip(Tape& tape, const Tensor& a, double lo, double hi);

// Row-wise softmax. When key_mask is non-empty (length cols), masked columns
// receive exactly zero weight; at least one column must be valid.
Tensor softmax(Tape& tape, const Tensor& a, std::span<const bool> key_mask = {});
Tensor log_softmax(Tape& tape, const Tensor& a);
Tensor logsumexp(Tape& tape, const Tensor& a, Axis axis = Axis::kAll);
Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);

// Column-wise maximum over rows whose mask entry is true. Ties go to the
// earliest row.
Tensor max_over_time(Tape& tape, const Tensor& a, std::span<const bool> mask = {});

// Inverted dropout: at train time each entry survives with probability
// 1 - rate and is scaled by 1 / (1 - rate); eval mode is the identity.
Tensor dropout(Tape& tape, const Tensor& a, double rate, bool train);

// Per-row standardisation (no affine part).
Tensor layer_norm(Tape& tape, const Tensor& a, double eps = 1e-6);

// Rows of table selected by ids -> {ids.size() x table.cols}.
Tensor embedding_lookup(Tape& tape, const Tensor& table, std::span<const std::size_t> ids);

// Elements at the given flat (row-major) indices -> {indices.size()}.
Tensor gather(Tape& tape, const Tensor& a, std::span<const std::size_t> flat_indices);

// Identity forward; multiplies the incoming gradient by factor.
Tensor scale_grad(Tape& tape, const Tensor& a, double factor);

// Scalar Σ value_weights[i]·terms[i] whose backward hands each term the
// upstream gradient times grad_weights[i]. Terms must be scalars.
Tensor weighted_sum(Tape& tape, std::span<const Tensor> terms,
                    std::span<const double> value_weights,
                    std::span<const double> grad_weights);

}  // namespace punc::ad
