#pragma once

// Sample generators shared by the estimation tests. These construct data
// with exactly known mutual information so estimates can be checked against
// closed forms that never touch the estimator code.

#include <cstdint>

#include "wcmi/matrix.hpp"
#include "wcmi/rng.hpp"

namespace test_support {

using wcmi::Matrix;
using wcmi::SeededRng;

/// Correlated scalar pairs (u, v) with v = rho u + sqrt(1-rho^2) w; their
/// mutual information is -0.5 ln(1 - rho^2).
inline std::pair<Matrix, Matrix> bivariate_gaussian_pairs(std::size_t n, double rho,
                                                          std::uint64_t seed) {
    SeededRng rng(seed);
    Matrix x(n, 1), z(n, 1);
    const double tail = std::sqrt(1.0 - rho * rho);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.normal();
        x(i, 0) = u;
        z(i, 0) = rho * u + tail * rng.normal();
    }
    return {std::move(x), std::move(z)};
}

/// One-hot encoded draws from a finite joint table (row-major cell order).
inline std::pair<Matrix, Matrix> one_hot_table_pairs(const Matrix& table, std::size_t n,
                                                     std::uint64_t seed) {
    SeededRng rng(seed);
    Matrix x(n, table.rows()), z(n, table.cols());
    for (std::size_t s = 0; s < n; ++s) {
        double u = rng.uniform01();
        std::size_t cell = table.rows() * table.cols() - 1;
        for (std::size_t c = 0; c < table.rows() * table.cols(); ++c) {
            u -= table.data()[c];
            if (u < 0.0) {
                cell = c;
                break;
            }
        }
        x(s, cell / table.cols()) = 1.0;
        z(s, cell % table.cols()) = 1.0;
    }
    return {std::move(x), std::move(z)};
}

}  // namespace test_support
