#pragma once

// Dense row-major double matrix plus the handful of elementary operations the
// rest of the library leans on. Sizes here stay small (<= a few thousand rows),
// so plain loops are enough; the trainer has its own fused hot path.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmem {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major, data.size() == rows * cols

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m(i, i) = 1.0;
        }
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    bool empty() const { return data.empty(); }

    bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }
};

inline bool all_finite(const Matrix& m) {
    for (double v : m.data) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

inline void require_finite(const Matrix& m, const char* what) {
    if (!all_finite(m)) {
        throw std::invalid_argument(std::string(what) + ": non-finite entries");
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: shape mismatch " + std::to_string(a.rows) + "x" +
                                    std::to_string(a.cols) + " * " + std::to_string(b.rows) + "x" +
                                    std::to_string(b.cols));
    }
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) {
                continue;
            }
            const double* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            t(j, i) = a(i, j);
        }
    }
    return t;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("add: shape mismatch");
    }
    Matrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) {
        c.data[i] += b.data[i];
    }
    return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("sub: shape mismatch");
    }
    Matrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) {
        c.data[i] -= b.data[i];
    }
    return c;
}

inline Matrix scale(const Matrix& a, double s) {
    Matrix c = a;
    for (double& v : c.data) {
        v *= s;
    }
    return c;
}

inline double frobenius_norm(const Matrix& a) {
    double sum = 0.0;
    for (double v : a.data) {
        sum += v * v;
    }
    return std::sqrt(sum);
}

inline double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.data) {
        m = std::max(m, std::fabs(v));
    }
    return m;
}

inline double dot_columns(const Matrix& a, std::size_t p, std::size_t q) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) {
        sum += a(i, p) * a(i, q);
    }
    return sum;
}

}  // namespace gmem
