#pragma once

// Differentiable primitives. Matrices are rank-2 [rows, cols]; "per-row"
// vectors are rank-1 [rows]. Every primitive checks shapes and names itself
// in the diagnostic.

#include <span>

#include "sim/nn/tensor.hpp"

namespace sim::nn {

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[B,I] * w[I,O] + bias[O]
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor tanh(const Tensor& a);
/// Integer power a^n, n >= 1.
Tensor powi(const Tensor& a, int n);
Tensor abs(const Tensor& a);
/// Elementwise clamp to [lo, hi]; gradient passes only strictly inside.
Tensor clamp(const Tensor& a, double lo, double hi);
/// sign(a) with sign(0) = 0; zero gradient.
Tensor sign(const Tensor& a);

/// Sum / mean of all elements -> scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Row sums of a matrix: [B,D] -> [B].
Tensor sum_cols(const Tensor& a);
/// Row-wise inner products: [B,D],[B,D] -> [B].
Tensor dot_rows(const Tensor& a, const Tensor& b);

/// v[D] repeated as rows -> [rows,D].
Tensor broadcast_rows(const Tensor& v, std::size_t rows);
/// v[B] repeated as columns -> [B,cols].
Tensor broadcast_cols(const Tensor& v, std::size_t cols);
/// Multiply row r of a[B,D] by the constant s[r].
Tensor scale_rows(const Tensor& a, std::span<const double> s);
/// [B,D],[B,E] -> [B,D+E].
Tensor concat_cols(const Tensor& a, const Tensor& b);

} // namespace sim::nn
