#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "vflbed/errors.hpp"
#include "vflbed/matrix.hpp"

namespace vflbed {

/// Column mean and covariance (population normalization, divide by n) of a
/// sample matrix.
struct MeanCov {
    std::vector<double> mean;
    DenseMatrix cov;  // d x d, symmetric
};

inline MeanCov mean_covariance(const DenseMatrix& x) {
    if (x.rows == 0 || x.cols == 0) throw InputError("mean_covariance: empty matrix");
    const std::size_t n = x.rows, d = x.cols;
    MeanCov out;
    out.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = x.row(i);
        for (std::size_t j = 0; j < d; ++j) out.mean[j] += row[j];
    }
    for (double& m : out.mean) m /= static_cast<double>(n);
    out.cov = DenseMatrix(d, d);
    std::vector<double> c(d);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = x.row(i);
        for (std::size_t j = 0; j < d; ++j) c[j] = row[j] - out.mean[j];
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = a; b < d; ++b) out.cov.at(a, b) += c[a] * c[b];
    }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            out.cov.at(a, b) /= static_cast<double>(n);
            out.cov.at(b, a) = out.cov.at(a, b);
        }
    return out;
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues sorted descending; eigenvectors are the matching columns.
struct SymmetricEigen {
    std::vector<double> values;
    DenseMatrix vectors;  // d x d, column i pairs with values[i]
};

inline SymmetricEigen symmetric_eigen(DenseMatrix a, int max_sweeps = 64) {
    if (a.rows != a.cols || a.rows == 0) throw InputError("symmetric_eigen: need a square matrix");
    const std::size_t d = a.rows;
    DenseMatrix v(d, d);
    for (std::size_t i = 0; i < d; ++i) v.at(i, i) = 1.0;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) off += a.at(p, q) * a.at(p, q);
        if (off < 1e-26) break;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) {
                const double apq = a.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < d; ++i) {
                    const double aip = a.at(i, p), aiq = a.at(i, q);
                    a.at(i, p) = c * aip - s * aiq;
                    a.at(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    const double api = a.at(p, i), aqi = a.at(q, i);
                    a.at(p, i) = c * api - s * aqi;
                    a.at(q, i) = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    const double vip = v.at(i, p), viq = v.at(i, q);
                    v.at(i, p) = c * vip - s * viq;
                    v.at(i, q) = s * vip + c * viq;
                }
            }
    }

    SymmetricEigen out;
    out.values.resize(d);
    for (std::size_t i = 0; i < d; ++i) out.values[i] = a.at(i, i);
    std::vector<std::size_t> order(d);
    for (std::size_t i = 0; i < d; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&out](std::size_t x, std::size_t y) { return out.values[x] > out.values[y]; });
    SymmetricEigen sorted;
    sorted.values.resize(d);
    sorted.vectors = DenseMatrix(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        sorted.values[i] = out.values[order[i]];
        for (std::size_t r = 0; r < d; ++r) sorted.vectors.at(r, i) = v.at(r, order[i]);
    }
    return sorted;
}

/// Cholesky factor L (lower triangular, A = L L^T) of a symmetric positive
/// definite matrix. Throws InputError if the matrix is not positive definite.
inline DenseMatrix cholesky(const DenseMatrix& a) {
    if (a.rows != a.cols || a.rows == 0) throw InputError("cholesky: need a square matrix");
    const std::size_t d = a.rows;
    DenseMatrix l(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a.at(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
            if (i == j) {
                if (s <= 0.0) throw InputError("cholesky: matrix is not positive definite");
                l.at(i, i) = std::sqrt(s);
            } else {
                l.at(i, j) = s / l.at(j, j);
            }
        }
    }
    return l;
}

/// Solve A x = b given the Cholesky factor L of A.
inline std::vector<double> cholesky_solve(const DenseMatrix& l, std::span<const double> b) {
    const std::size_t d = l.rows;
    if (b.size() != d) throw InputError("cholesky_solve: dimension mismatch");
    std::vector<double> y(d), x(d);
    for (std::size_t i = 0; i < d; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l.at(i, k) * y[k];
        y[i] = s / l.at(i, i);
    }
    for (std::size_t i = d; i-- > 0;) {
        double s = y[i];
        for (std::size_t k = i + 1; k < d; ++k) s -= l.at(k, i) * x[k];
        x[i] = s / l.at(i, i);
    }
    return x;
}

} // namespace vflbed
