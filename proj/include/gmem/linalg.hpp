#pragma once

// Ridge regression (SPD Cholesky on the normal equations), one-sided Jacobi
// SVD, rank-truncated pseudoinverse, and the stabilized column softmax used by
// the attention engine. Everything is double precision and deterministic.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmem/matrix.hpp"

namespace gmem {

struct SvdResult {
    Matrix u;                             // m x n, orthonormal columns
    std::vector<double> singular_values;  // length n, nonincreasing, >= 0
    Matrix v;                             // n x n, orthonormal columns
};

struct SvdError : std::runtime_error {
    double achieved_offdiag;
    explicit SvdError(double offdiag)
        : std::runtime_error("svd: Jacobi sweeps did not converge, off-diagonal norm " +
                             std::to_string(offdiag)),
          achieved_offdiag(offdiag) {}
};

namespace detail {

// In-place Cholesky of an SPD matrix; returns false on a non-positive pivot.
inline bool cholesky(Matrix& a) {
    const std::size_t n = a.rows;
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (std::size_t k = 0; k < j; ++k) {
            diag -= a(j, k) * a(j, k);
        }
        if (!(diag > 0.0)) {
            return false;
        }
        const double ljj = std::sqrt(diag);
        a(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = a(i, j);
            for (std::size_t k = 0; k < j; ++k) {
                v -= a(i, k) * a(j, k);
            }
            a(i, j) = v / ljj;
        }
    }
    return true;
}

// Solve L L^T X = B with L lower triangular; B is overwritten with X.
inline void cholesky_solve(const Matrix& l, Matrix& b) {
    const std::size_t n = l.rows;
    const std::size_t q = b.cols;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < q; ++c) {
            double v = b(i, c);
            for (std::size_t k = 0; k < i; ++k) {
                v -= l(i, k) * b(k, c);
            }
            b(i, c) = v / l(i, i);
        }
    }
    for (std::size_t ii = n; ii-- > 0;) {
        for (std::size_t c = 0; c < q; ++c) {
            double v = b(ii, c);
            for (std::size_t k = ii + 1; k < n; ++k) {
                v -= l(k, ii) * b(k, c);
            }
            b(ii, c) = v / l(ii, ii);
        }
    }
}

// Deterministic orthonormal completion for zero singular directions: replace
// near-zero columns of u by standard basis vectors orthogonalized against the
// columns already present.
inline void complete_orthonormal(Matrix& u, const std::vector<double>& sigma, double sigma_floor) {
    const std::size_t m = u.rows;
    const std::size_t n = u.cols;
    std::size_t next_axis = 0;
    for (std::size_t j = 0; j < n; ++j) {
        if (sigma[j] > sigma_floor) {
            continue;
        }
        for (; next_axis < m; ++next_axis) {
            std::vector<double> cand(m, 0.0);
            cand[next_axis] = 1.0;
            for (std::size_t k = 0; k < n; ++k) {
                if (k == j) {
                    continue;
                }
                double proj = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    proj += cand[i] * u(i, k);
                }
                for (std::size_t i = 0; i < m; ++i) {
                    cand[i] -= proj * u(i, k);
                }
            }
            double norm = 0.0;
            for (double v : cand) {
                norm += v * v;
            }
            norm = std::sqrt(norm);
            if (norm > 0.5) {
                for (std::size_t i = 0; i < m; ++i) {
                    u(i, j) = cand[i] / norm;
                }
                ++next_axis;
                break;
            }
        }
    }
}

}  // namespace detail

// argmin_W ||x W - y||_F^2 + lambda ||W||_F^2 via Cholesky of x^T x + lambda I.
inline Matrix ridge_solve(const Matrix& x, const Matrix& y, double lambda) {
    require_finite(x, "ridge_solve x");
    require_finite(y, "ridge_solve y");
    if (x.rows == 0 || x.rows != y.rows) {
        throw std::invalid_argument("ridge_solve: need n >= 1 and matching row counts");
    }
    if (lambda < 0.0) {
        throw std::invalid_argument("ridge_solve: lambda must be nonnegative");
    }
    const std::size_t p = x.cols;
    Matrix gram(p, p);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = i; j < p; ++j) {
            double v = 0.0;
            for (std::size_t k = 0; k < x.rows; ++k) {
                v += x(k, i) * x(k, j);
            }
            gram(i, j) = v;
            gram(j, i) = v;
        }
        gram(i, i) += lambda;
    }
    Matrix rhs = matmul(transpose(x), y);
    if (!detail::cholesky(gram)) {
        throw std::runtime_error("ridge_solve: singular design (x^T x not positive definite at lambda=" +
                                 std::to_string(lambda) + ")");
    }
    detail::cholesky_solve(gram, rhs);
    return rhs;
}

// One-sided Jacobi SVD. Off-diagonal tolerance 1e-12 (relative), max 60 sweeps.
inline SvdResult svd(const Matrix& a) {
    require_finite(a, "svd input");
    if (a.rows == 0 || a.cols == 0) {
        throw std::invalid_argument("svd: empty matrix");
    }
    const bool transposed = a.rows < a.cols;
    Matrix w = transposed ? transpose(a) : a;
    const std::size_t m = w.rows;
    const std::size_t n = w.cols;
    Matrix v = Matrix::identity(n);

    constexpr double kTol = 1e-12;
    constexpr int kMaxSweeps = 60;
    double offdiag = 0.0;
    bool converged = false;
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        offdiag = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double alpha = dot_columns(w, p, p);
                const double beta = dot_columns(w, q, q);
                const double gamma = dot_columns(w, p, q);
                const double denom = std::sqrt(alpha * beta);
                const double rel = denom > 0.0 ? std::fabs(gamma) / denom : 0.0;
                offdiag = std::max(offdiag, rel);
                if (rel <= kTol) {
                    continue;
                }
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = w(i, p);
                    const double wq = w(i, q);
                    w(i, p) = c * wp - s * wq;
                    w(i, q) = s * wp + c * wq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p);
                    const double vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        converged = offdiag <= kTol;
    }
    if (!converged) {
        // Final measure after the last sweep decides convergence.
        double final_off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double denom = std::sqrt(dot_columns(w, p, p) * dot_columns(w, q, q));
                if (denom > 0.0) {
                    final_off = std::max(final_off, std::fabs(dot_columns(w, p, q)) / denom);
                }
            }
        }
        if (final_off > kTol) {
            throw SvdError(final_off);
        }
    }

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        sigma[j] = std::sqrt(dot_columns(w, j, j));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

    SvdResult out;
    out.u = Matrix(m, n);
    out.v = Matrix(n, n);
    out.singular_values.resize(n);
    const double sigma_max = sigma.empty() ? 0.0 : sigma[order[0]];
    const double floor = sigma_max * 1e-300 + 0.0;  // exact zeros only
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.singular_values[j] = sigma[src];
        for (std::size_t i = 0; i < n; ++i) {
            out.v(i, j) = v(i, src);
        }
        if (sigma[src] > floor && sigma[src] > 0.0) {
            for (std::size_t i = 0; i < m; ++i) {
                out.u(i, j) = w(i, src) / sigma[src];
            }
        }
    }
    detail::complete_orthonormal(out.u, out.singular_values, 0.0);

    if (transposed) {
        std::swap(out.u, out.v);
    }
    return out;
}

// V diag(1/sigma_i for i < rank and sigma_i > 1e-10 sigma_max, else 0) U^T.
inline Matrix pinv_truncated(const Matrix& a, std::size_t rank) {
    const std::size_t min_dim = std::min(a.rows, a.cols);
    if (rank < 1 || rank > min_dim) {
        throw std::invalid_argument("pinv_truncated: rank " + std::to_string(rank) +
                                    " out of range [1, " + std::to_string(min_dim) + "]");
    }
    const SvdResult f = svd(a);
    const double cutoff = 1e-10 * (f.singular_values.empty() ? 0.0 : f.singular_values[0]);
    Matrix pinv(a.cols, a.rows);
    const std::size_t terms = std::min(rank, f.singular_values.size());
    for (std::size_t k = 0; k < terms; ++k) {
        const double s = f.singular_values[k];
        if (s <= cutoff || s == 0.0) {
            continue;
        }
        const double inv = 1.0 / s;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double vik = f.v(i, k) * inv;
            if (vik == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < a.rows; ++j) {
                pinv(i, j) += vik * f.u(j, k);
            }
        }
    }
    return pinv;
}

// Column-wise softmax, stabilized by per-column max subtraction. With the
// causal flag, entries with key index > query index (row > column) get weight
// zero and the column renormalizes over the prefix. Matrix must then be square.
inline Matrix softmax_columns(const Matrix& scores, bool causal = false) {
    require_finite(scores, "softmax_columns scores");
    if (causal && scores.rows != scores.cols) {
        throw std::invalid_argument("softmax_columns: causal mask needs a square matrix");
    }
    Matrix a(scores.rows, scores.cols);
    for (std::size_t q = 0; q < scores.cols; ++q) {
        const std::size_t limit = causal ? q + 1 : scores.rows;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < limit; ++k) {
            mx = std::max(mx, scores(k, q));
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < limit; ++k) {
            const double e = std::exp(scores(k, q) - mx);
            a(k, q) = e;
            sum += e;
        }
        for (std::size_t k = 0; k < limit; ++k) {
            a(k, q) /= sum;
        }
    }
    return a;
}

}  // namespace gmem
