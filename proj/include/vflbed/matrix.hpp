#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vflbed/errors.hpp"

namespace vflbed {

/// Dense row-major float64 matrix. The single storage type for features,
/// embeddings, weights and gradients.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void require_shape(const DenseMatrix& m, std::size_t rows, std::size_t cols, const char* who) {
    if (m.rows != rows || m.cols != cols)
        throw InputError(std::string(who) + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", got " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
}

/// C = A * B. Cache-friendly i-k-j loop; deterministic summation order.
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.rows)
        throw InputError("matmul: inner dimensions differ (" + std::to_string(a.cols) + " vs " +
                         std::to_string(b.rows) + ")");
    DenseMatrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = a.data.data() + i * a.cols;
        double* ci = c.data.data() + i * c.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

/// C = A^T * B (A is m x n, B is m x p, C is n x p).
inline DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows != b.rows) throw InputError("matmul_at_b: row counts differ");
    DenseMatrix c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* ak = a.data.data() + k * a.cols;
        const double* bk = b.data.data() + k * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = ak[i];
            if (aki == 0.0) continue;
            double* ci = c.data.data() + i * c.cols;
            for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
        }
    }
    return c;
}

/// C = A * B^T (A is m x n, B is p x n, C is m x p).
inline DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.cols) throw InputError("matmul_a_bt: column counts differ");
    DenseMatrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = a.data.data() + i * a.cols;
        double* ci = c.data.data() + i * c.cols;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* bj = b.data.data() + j * b.cols;
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += ai[k] * bj[k];
            ci[j] = s;
        }
    }
    return c;
}

inline DenseMatrix transpose(const DenseMatrix& a) {
    DenseMatrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

/// Narrow view: copy columns [begin, end) of every row.
inline DenseMatrix slice_cols(const DenseMatrix& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.cols) throw InputError("slice_cols: range out of bounds");
    DenseMatrix s(a.rows, end - begin);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* src = a.data.data() + i * a.cols + begin;
        std::copy(src, src + s.cols, s.data.data() + i * s.cols);
    }
    return s;
}

/// Paste `block` into columns [begin, begin+block.cols) of every row of `dst`.
inline void paste_cols(DenseMatrix& dst, const DenseMatrix& block, std::size_t begin) {
    if (block.rows != dst.rows || begin + block.cols > dst.cols)
        throw InputError("paste_cols: block does not fit");
    for (std::size_t i = 0; i < dst.rows; ++i)
        std::copy(block.data.data() + i * block.cols, block.data.data() + (i + 1) * block.cols,
                  dst.data.data() + i * dst.cols + begin);
}

/// Gather a row subset into a new matrix (used for batching).
inline DenseMatrix gather_rows(const DenseMatrix& a, std::span<const std::size_t> ids) {
    DenseMatrix g(ids.size(), a.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= a.rows) throw InputError("gather_rows: row index out of range");
        std::copy(a.row(ids[i]).begin(), a.row(ids[i]).end(), g.row(i).begin());
    }
    return g;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InputError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

/// Cosine similarity. A zero-norm input makes the value undefined; the result
/// is then 0 and `*degenerate` (if given) is set. For identical inputs the
/// result is exactly 1.0: dot(a,a) and squared_norm(a) share one summation
/// order, and sqrt(x*x) == x in IEEE-754 binary arithmetic.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b,
                                bool* degenerate = nullptr) {
    const double na2 = squared_norm(a);
    const double nb2 = squared_norm(b);
    if (na2 == 0.0 || nb2 == 0.0) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    const double c = dot(a, b) / std::sqrt(na2 * nb2);
    return std::clamp(c, -1.0, 1.0);
}

} // namespace vflbed
