#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ortho_cate/errors.hpp"

namespace ortho_cate {

// Dense row-major matrix. Sized for the small design matrices used here
// (a few hundred columns at most).
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<const double> row(std::size_t i) const {
        return {data.data() + i * cols, cols};
    }
    std::span<double> row(std::size_t i) {
        return {data.data() + i * cols, cols};
    }
};

// Summation with a deterministic pairwise order: permutation of the
// reduction tree never depends on thread count.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double mean(std::span<const double> v) {
    return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size());
}

// Cholesky factorization of an SPD matrix, in place. Returns false when a
// non-positive pivot shows up.
inline bool cholesky_in_place(Matrix& a) {
    const std::size_t n = a.rows;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a(i, j);
            for (std::size_t k = 0; k < j; ++k) sum -= a(i, k) * a(j, k);
            if (i == j) {
                if (!(sum > 0.0)) return false;
                a(i, i) = std::sqrt(sum);
            } else {
                a(i, j) = sum / a(j, j);
            }
        }
    }
    return true;
}

inline std::vector<double> cholesky_solve_factored(const Matrix& l,
                                                   std::span<const double> b) {
    const std::size_t n = l.rows;
    std::vector<double> x(b.begin(), b.end());
    for (std::size_t i = 0; i < n; ++i) {
        double s = x[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x[k];
        x[i] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = x[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

// Solve (A + jitter*I) x = b for symmetric A, escalating the jitter until the
// factorization succeeds. Rank-deficient systems (e.g. an unpenalized ridge
// on degenerate data) resolve to a near-minimum-norm solution.
inline std::vector<double> solve_spd(const Matrix& a, std::span<const double> b) {
    double scale = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) scale = std::max(scale, std::abs(a(i, i)));
    if (scale == 0.0) scale = 1.0;
    for (double jitter : {0.0, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4}) {
        Matrix l = a;
        for (std::size_t i = 0; i < a.rows; ++i) l(i, i) += jitter * scale;
        if (cholesky_in_place(l)) return cholesky_solve_factored(l, b);
    }
    throw DegenerateDesign("normal equations are not positive definite");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace ortho_cate
