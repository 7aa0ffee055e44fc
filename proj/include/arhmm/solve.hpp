#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "arhmm/common.hpp"

namespace arhmm {

/// Solve A x = b by Gauss-Jordan elimination with partial pivoting.
/// Returns nullopt when a pivot falls below 1e-12 times the largest
/// absolute entry of the input matrix (treated as singular).
inline std::optional<std::vector<double>> gauss_jordan_solve(Matrix a, std::vector<double> b) {
    const std::size_t n = a.rows();
    if (a.cols() != n || b.size() != n) throw DataError("gauss_jordan_solve: shape mismatch");
    if (n == 0) return std::vector<double>{};

    double scale = 0.0;
    for (double v : a.data()) scale = std::max(scale, std::abs(v));
    const double min_pivot = 1e-12 * scale;

    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
        }
        if (!(std::abs(a(pivot, col)) > min_pivot)) return std::nullopt;
        if (pivot != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(pivot, c));
            std::swap(b[col], b[pivot]);
        }
        const double inv = 1.0 / a(col, col);
        for (std::size_t c = 0; c < n; ++c) a(col, c) *= inv;
        b[col] *= inv;
        a(col, col) = 1.0;
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a(r, col);
            if (f == 0.0) continue;
            for (std::size_t c = 0; c < n; ++c) a(r, c) -= f * a(col, c);
            b[r] -= f * b[col];
        }
    }
    return b;
}

}  // namespace arhmm
