#pragma once

#include <vector>

#include "pedcross/tensor.hpp"

namespace pedcross::ops {

// Every op validates shapes, computes the forward result, verifies the
// output is finite, and (when `tape` is non-null) records a backward
// closure that accumulates into the inputs' grad buffers.

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor transpose(const Tensor& a, Tape* tape = nullptr);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);  // elementwise
Tensor scale(const Tensor& a, double s, Tape* tape = nullptr);

// The only broadcast in the engine besides mask-over-heads: a rank-1
// bias added to every row of a rank-2 tensor.
Tensor add_row_bias(const Tensor& x, const Tensor& b, Tape* tape = nullptr);

// x[T x A] * w[A x B] + b[B]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape = nullptr);

Tensor relu(const Tensor& x, Tape* tape = nullptr);
Tensor sigmoid(const Tensor& x, Tape* tape = nullptr);

// Row-wise softmax of (x + mask). Mask entries must be 0 or -inf; an
// undefined mask means all zeros. Mask is either the same shape as x or
// rank-1 of length cols(x), broadcast over rows. Rows sum to 1 and
// masked positions are exactly 0. A fully masked row is an error.
Tensor masked_softmax(const Tensor& x, const Tensor& mask, Tape* tape = nullptr);

// Per-row standardization of x[T x D] followed by gain/bias (both [D]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                  Tape* tape = nullptr);

Tensor mean_pool_time(const Tensor& x, Tape* tape = nullptr);  // [T x D] -> [1 x D]

// [T x D] -> [T' x D] with T' = floor((T - window) / stride) + 1; each
// output row is the mean of its window. T < window is an error.
Tensor strided_mean_pool(const Tensor& x, int window, int stride, Tape* tape = nullptr);

Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape = nullptr);
Tensor slice_rows(const Tensor& x, int begin, int end, Tape* tape = nullptr);
Tensor sum(const Tensor& x, Tape* tape = nullptr);  // -> scalar

// Inverted dropout; identity when rate == 0 or the tape carries no RNG.
Tensor dropout(const Tensor& x, double rate, Tape* tape = nullptr);

}  // namespace pedcross::ops
