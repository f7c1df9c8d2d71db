#include "tomfield/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tomfield/errors.hpp"

namespace tomfield::kernels {

namespace {

void check_affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
        throw DimensionError("affine: input " + x.shape_string() + ", weights " + w.shape_string() +
                             ", bias " + b.shape_string());
    }
}

void reshape(Matrix& m, std::size_t rows, std::size_t cols) {
    if (m.rows() != rows || m.cols() != cols) m = Matrix(rows, cols);
}

// Row kernels shared by both builds; only the outer loop differs.
inline void affine_row(const Matrix& x, const Matrix& w, const Matrix& b, Matrix& out,
                       std::size_t i) {
    const std::size_t k = x.cols();
    const std::size_t n = w.cols();
    double* y = out.row_span(i).data();
    const double* bias = b.values().data();
    for (std::size_t j = 0; j < n; ++j) y[j] = bias[j];
    const double* xi = x.row_span(i).data();
    for (std::size_t p = 0; p < k; ++p) {
        const double xv = xi[p];
        const double* wp = w.row_span(p).data();
        for (std::size_t j = 0; j < n; ++j) y[j] += xv * wp[j];
    }
}

inline void grad_input_row(const Matrix& dy, const Matrix& w, Matrix& dx, std::size_t i) {
    const std::size_t k = w.rows();
    const std::size_t n = w.cols();
    const double* g = dy.row_span(i).data();
    double* out = dx.row_span(i).data();
    for (std::size_t p = 0; p < k; ++p) {
        const double* wp = w.row_span(p).data();
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[j] * wp[j];
        out[p] = acc;
    }
}

inline void grad_weights_row(const Matrix& x, const Matrix& dy, Matrix& dw, std::size_t p) {
    const std::size_t m = x.rows();
    const std::size_t n = dy.cols();
    double* out = dw.row_span(p).data();
    for (std::size_t j = 0; j < n; ++j) out[j] = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double xv = x(i, p);
        const double* g = dy.row_span(i).data();
        for (std::size_t j = 0; j < n; ++j) out[j] += xv * g[j];
    }
}

inline void column_sum_col(const Matrix& dy, Matrix& db, std::size_t j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dy.rows(); ++i) acc += dy(i, j);
    db[j] = acc;
}

}  // namespace

namespace serial {

void affine(const Matrix& x, const Matrix& w, const Matrix& b, Matrix& out) {
    check_affine(x, w, b);
    reshape(out, x.rows(), w.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) affine_row(x, w, b, out, i);
}

void affine_grad_input(const Matrix& dy, const Matrix& w, Matrix& dx) {
    reshape(dx, dy.rows(), w.rows());
    for (std::size_t i = 0; i < dy.rows(); ++i) grad_input_row(dy, w, dx, i);
}

void affine_grad_weights(const Matrix& x, const Matrix& dy, Matrix& dw) {
    reshape(dw, x.cols(), dy.cols());
    for (std::size_t p = 0; p < x.cols(); ++p) grad_weights_row(x, dy, dw, p);
}

void column_sum(const Matrix& dy, Matrix& db) {
    reshape(db, 1, dy.cols());
    for (std::size_t j = 0; j < dy.cols(); ++j) column_sum_col(dy, db, j);
}

}  // namespace serial

namespace parallel {

void affine(const Matrix& x, const Matrix& w, const Matrix& b, Matrix& out) {
    check_affine(x, w, b);
    reshape(out, x.rows(), w.cols());
    const auto rows = static_cast<std::ptrdiff_t>(x.rows());
    const std::size_t work = x.rows() * x.cols() * w.cols();
#pragma omp parallel for schedule(static) if (work >= kParallelWorkThreshold)
    for (std::ptrdiff_t i = 0; i < rows; ++i) affine_row(x, w, b, out, static_cast<std::size_t>(i));
}

void affine_grad_input(const Matrix& dy, const Matrix& w, Matrix& dx) {
    reshape(dx, dy.rows(), w.rows());
    const auto rows = static_cast<std::ptrdiff_t>(dy.rows());
    const std::size_t work = dy.rows() * w.rows() * w.cols();
#pragma omp parallel for schedule(static) if (work >= kParallelWorkThreshold)
    for (std::ptrdiff_t i = 0; i < rows; ++i) grad_input_row(dy, w, dx, static_cast<std::size_t>(i));
}

void affine_grad_weights(const Matrix& x, const Matrix& dy, Matrix& dw) {
    reshape(dw, x.cols(), dy.cols());
    const auto rows = static_cast<std::ptrdiff_t>(x.cols());
    const std::size_t work = x.rows() * x.cols() * dy.cols();
#pragma omp parallel for schedule(static) if (work >= kParallelWorkThreshold)
    for (std::ptrdiff_t p = 0; p < rows; ++p) grad_weights_row(x, dy, dw, static_cast<std::size_t>(p));
}

void column_sum(const Matrix& dy, Matrix& db) {
    reshape(db, 1, dy.cols());
    const auto cols = static_cast<std::ptrdiff_t>(dy.cols());
    const std::size_t work = dy.rows() * dy.cols();
#pragma omp parallel for schedule(static) if (work >= kParallelWorkThreshold)
    for (std::ptrdiff_t j = 0; j < cols; ++j) column_sum_col(dy, db, static_cast<std::size_t>(j));
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace tomfield::kernels
