#pragma once

// Dense affine kernels used by the tape. Two builds of the same loops:
// `serial` is the reference, `parallel` splits output rows across OpenMP
// threads. Each output element is accumulated by exactly one thread in the
// same order as the reference, so both produce bitwise-identical results.

#include "tomfield/matrix.hpp"

namespace tomfield::kernels {

namespace serial {
// out = x * w + b (b broadcast over rows)
void affine(const Matrix& x, const Matrix& w, const Matrix& b, Matrix& out);
// dx = dy * w^T
void affine_grad_input(const Matrix& dy, const Matrix& w, Matrix& dx);
// dw = x^T * dy
void affine_grad_weights(const Matrix& x, const Matrix& dy, Matrix& dw);
// db = column sums of dy
void column_sum(const Matrix& dy, Matrix& db);
}  // namespace serial

namespace parallel {
void affine(const Matrix& x, const Matrix& w, const Matrix& b, Matrix& out);
void affine_grad_input(const Matrix& dy, const Matrix& w, Matrix& dx);
void affine_grad_weights(const Matrix& x, const Matrix& dy, Matrix& dw);
void column_sum(const Matrix& dy, Matrix& db);
}  // namespace parallel

// Multiply-add count below which the parallel kernels stay on one thread.
inline constexpr std::size_t kParallelWorkThreshold = 1 << 15;

int max_threads();

}  // namespace tomfield::kernels
