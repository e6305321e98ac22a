// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "moesim/error.hpp"

namespace moesim {

// Dense row-major matrix of doubles. Communication byte accounting uses the
// modeled wire dtype (ModelConfig::dtype_bytes), not sizeof(double); the
// simulator itself always computes in double.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// |a - b| measured elementwise; both absolute and relative-to-max forms are
// used by the equivalence suites.
inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        if (d < 0) d = -d;
        if (d > m) m = d;
    }
    return m;
}

// Relative with an absolute floor of 1.0 so exact-zero entries compare by
// absolute difference instead of dividing by zero.
inline double max_rel_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("max_rel_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double x = a.data[i], y = b.data[i];
        double d = x - y;
        if (d < 0) d = -d;
        double ax = x < 0 ? -x : x;
        double ay = y < 0 ? -y : y;
        double scale = ax > ay ? ax : ay;
        if (scale < 1.0) scale = 1.0;
        double r = d / scale;
        if (r > m) m = r;
    }
    return m;
}

}  // namespace moesim
