#pragma once

// Small dense symmetric linear algebra for the rewriting editor: cyclic
// Jacobi eigendecomposition, a pseudo-inverse least-squares solve for
// min ||A v - y||^2 over symmetric PSD A, Gram-Schmidt, and singular values
// of low-rank products via the smaller-side Gram matrix. All O(n^3), fine at
// desk scale (n up to a few hundred).

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "editlab/tensor.hpp"

namespace editlab {

// Symmetric matrix stored row-major n x n. Returns eigenvalues (ascending is
// not guaranteed; use as-is) and column-major eigenvectors in `vecs` (vecs
// row-major n x n, column k = eigenvector k).
inline void jacobi_eigh(std::vector<double> a, int n, std::vector<double>& vals,
                        std::vector<double>& vecs) {
    if (static_cast<int>(a.size()) != n * n) throw DimensionError("jacobi_eigh: bad size");
    vecs.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) vecs[static_cast<std::size_t>(i) * n + i] = 1.0;
    auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
    auto vt = [&](int i, int j) -> double& { return vecs[static_cast<std::size_t>(i) * n + j]; };
    const int max_sweeps = 60;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-26 * (n > 0 ? n : 1)) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (apq == 0.0) continue;
                const double app = at(p, p), aqq = at(q, q);
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = vt(k, p), vkq = vt(k, q);
                    vt(k, p) = c * vkp - s * vkq;
                    vt(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    vals.resize(n);
    for (int i = 0; i < n; ++i) vals[i] = at(i, i);
}

// Minimum-norm least-squares solution of A v = y for symmetric PSD A,
// via spectral pseudo-inverse. Never forms an explicit inverse; directions
// with eigenvalue below rel_tol * max|eig| are dropped.
inline std::vector<double> least_squares_sym(const std::vector<double>& A, int n,
                                             const std::vector<double>& y,
                                             double rel_tol = 1e-12) {
    if (static_cast<int>(y.size()) != n) throw DimensionError("least_squares_sym: bad rhs");
    std::vector<double> vals, vecs;
    jacobi_eigh(A, n, vals, vecs);
    double lmax = 0.0;
    for (double v : vals) lmax = std::max(lmax, std::abs(v));
    std::vector<double> out(n, 0.0);
    if (lmax == 0.0) return out;
    for (int k = 0; k < n; ++k) {
        if (std::abs(vals[k]) <= rel_tol * lmax) continue;
        double qy = 0.0;
        for (int i = 0; i < n; ++i) qy += vecs[static_cast<std::size_t>(i) * n + k] * y[i];
        const double coef = qy / vals[k];
        for (int i = 0; i < n; ++i) out[i] += coef * vecs[static_cast<std::size_t>(i) * n + k];
    }
    return out;
}

inline double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// In-place modified Gram-Schmidt over columns given as a vector of vectors.
// Columns that collapse below `tol` of their original norm are dropped.
inline std::vector<std::vector<double>> gram_schmidt(std::vector<std::vector<double>> cols,
                                                     double tol = 1e-10) {
    std::vector<std::vector<double>> out;
    for (auto& c : cols) {
        const double n0 = vec_norm(c);
        if (n0 == 0.0) continue;
        for (const auto& q : out) {
            double d = 0.0;
            for (std::size_t i = 0; i < c.size(); ++i) d += q[i] * c[i];
            for (std::size_t i = 0; i < c.size(); ++i) c[i] -= d * q[i];
        }
        const double n1 = vec_norm(c);
        if (n1 <= tol * n0) continue;
        for (double& x : c) x /= n1;
        out.push_back(std::move(c));
    }
    return out;
}

// Singular values (descending) of an m x n matrix, computed from the Gram
// matrix on the smaller side.
inline std::vector<double> singular_values(const std::vector<double>& M, int m, int n) {
    if (static_cast<int>(M.size()) != m * n) throw DimensionError("singular_values: bad size");
    const bool use_rows = m <= n;
    const int k = use_rows ? m : n;
    std::vector<double> gram(static_cast<std::size_t>(k) * k, 0.0);
    if (use_rows) {
        for (int i = 0; i < k; ++i)
            for (int j = i; j < k; ++j) {
                double s = 0.0;
                for (int t = 0; t < n; ++t)
                    s += M[static_cast<std::size_t>(i) * n + t] * M[static_cast<std::size_t>(j) * n + t];
                gram[static_cast<std::size_t>(i) * k + j] = s;
                gram[static_cast<std::size_t>(j) * k + i] = s;
            }
    } else {
        for (int i = 0; i < k; ++i)
            for (int j = i; j < k; ++j) {
                double s = 0.0;
                for (int t = 0; t < m; ++t)
                    s += M[static_cast<std::size_t>(t) * n + i] * M[static_cast<std::size_t>(t) * n + j];
                gram[static_cast<std::size_t>(i) * k + j] = s;
                gram[static_cast<std::size_t>(j) * k + i] = s;
            }
    }
    std::vector<double> vals, vecs;
    jacobi_eigh(gram, k, vals, vecs);
    std::vector<double> sv(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) sv[i] = std::sqrt(std::max(0.0, vals[i]));
    std::sort(sv.begin(), sv.end(), std::greater<double>());
    return sv;
}

}  // namespace editlab
