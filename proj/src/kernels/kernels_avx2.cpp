// SPDX-License-Identifier: Apache-2.0
//
// AVX2 kernels, 4 doubles per vector. Multiplies and adds stay separate
// (_mm256_mul_pd + _mm256_add_pd, never FMA) so every output element sees the
// identical rounding sequence as the scalar reference. This file is the only
// translation unit compiled with -mavx2; callers reach it through the
// dispatcher after a cpuid check.

#include <immintrin.h>

#include "moesim/kernels.hpp"

namespace moesim::kernels {
namespace {

constexpr std::size_t kLanes = 4;

void matmul_avx2(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        std::size_t j = 0;
        for (; j + kLanes <= n; j += kLanes) _mm256_storeu_pd(crow + j, _mm256_setzero_pd());
        for (; j < n; ++j) crow[j] = 0.0;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const __m256d avv = _mm256_set1_pd(av);
            const double* brow = b + p * n;
            std::size_t jj = 0;
            for (; jj + kLanes <= n; jj += kLanes) {
                const __m256d prod = _mm256_mul_pd(avv, _mm256_loadu_pd(brow + jj));
                _mm256_storeu_pd(crow + jj, _mm256_add_pd(_mm256_loadu_pd(crow + jj), prod));
            }
            for (; jj < n; ++jj) crow[jj] += av * brow[jj];
        }
    }
}

void relu_avx2(double* x, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(x + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    for (; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void axpy_avx2(double* dst, const double* src, double w, std::size_t n) {
    const __m256d wv = _mm256_set1_pd(w);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const __m256d prod = _mm256_mul_pd(wv, _mm256_loadu_pd(src + i));
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), prod));
    }
    for (; i < n; ++i) dst[i] += w * src[i];
}

void scale_avx2(double* x, double w, std::size_t n) {
    const __m256d wv = _mm256_set1_pd(w);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), wv));
    for (; i < n; ++i) x[i] *= w;
}

}  // namespace

// Looked up by the dispatcher; see dispatch.cpp.
extern const Backend kAvx2Backend;
const Backend kAvx2Backend{"avx2", matmul_avx2, relu_avx2, axpy_avx2, scale_avx2};

}  // namespace moesim::kernels
