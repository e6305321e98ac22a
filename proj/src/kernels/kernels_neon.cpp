// SPDX-License-Identifier: Apache-2.0
//
// NEON kernels, 2 doubles per vector. Same bit-exactness contract as the AVX2
// file: separate vmulq/vaddq, no vfmaq, so the rounding sequence matches the
// scalar reference element for element.

#include <arm_neon.h>

#include "moesim/kernels.hpp"

namespace moesim::kernels {
namespace {

constexpr std::size_t kLanes = 2;

void matmul_neon(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        std::size_t j = 0;
        for (; j + kLanes <= n; j += kLanes) vst1q_f64(crow + j, vdupq_n_f64(0.0));
        for (; j < n; ++j) crow[j] = 0.0;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const float64x2_t avv = vdupq_n_f64(av);
            const double* brow = b + p * n;
            std::size_t jj = 0;
            for (; jj + kLanes <= n; jj += kLanes) {
                const float64x2_t prod = vmulq_f64(avv, vld1q_f64(brow + jj));
                vst1q_f64(crow + jj, vaddq_f64(vld1q_f64(crow + jj), prod));
            }
            for (; jj < n; ++jj) crow[jj] += av * brow[jj];
        }
    }
}

void relu_neon(double* x, std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        vst1q_f64(x + i, vmaxq_f64(vld1q_f64(x + i), zero));
    for (; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void axpy_neon(double* dst, const double* src, double w, std::size_t n) {
    const float64x2_t wv = vdupq_n_f64(w);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const float64x2_t prod = vmulq_f64(wv, vld1q_f64(src + i));
        vst1q_f64(dst + i, vaddq_f64(vld1q_f64(dst + i), prod));
    }
    for (; i < n; ++i) dst[i] += w * src[i];
}

void scale_neon(double* x, double w, std::size_t n) {
    const float64x2_t wv = vdupq_n_f64(w);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        vst1q_f64(x + i, vmulq_f64(vld1q_f64(x + i), wv));
    for (; i < n; ++i) x[i] *= w;
}

}  // namespace

extern const Backend kNeonBackend;
const Backend kNeonBackend{"neon", matmul_neon, relu_neon, axpy_neon, scale_neon};

}  // namespace moesim::kernels
