// SPDX-License-Identifier: Apache-2.0
//
// Scalar reference kernels. The SIMD variants mirror the loop structure here
// exactly; keep the per-element operation order in sync with them.

#include "moesim/kernels.hpp"

namespace moesim::kernels {
namespace {

void matmul_scalar(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void relu_scalar(double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void axpy_scalar(double* dst, const double* src, double w, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += w * src[i];
}

void scale_scalar(double* x, double w, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= w;
}

}  // namespace

const Backend& scalar_backend() {
    static const Backend backend{"scalar", matmul_scalar, relu_scalar,
                                 axpy_scalar, scale_scalar};
    return backend;
}

}  // namespace moesim::kernels
