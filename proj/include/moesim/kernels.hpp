// SPDX-License-Identifier: Apache-2.0
//
// Row-level arithmetic used by the pipelines. Each operation has a scalar
// reference and, where the build target supports it, a SIMD variant selected
// at runtime. Variants are required to be bit-identical to the scalar
// reference: per output element they perform the same multiplies and adds in
// the same order, and the whole project builds with -ffp-contract=off so the
// compiler cannot fuse what the intrinsics keep separate.
#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace moesim::kernels {

struct Backend {
    const char* name;
    // c[i,j] = sum_p a[i,p] * b[p,j], accumulated in ascending p. c is
    // overwritten. Row-major, no aliasing.
    void (*matmul)(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);
    // x[i] = max(x[i], 0), finite inputs.
    void (*relu)(double* x, std::size_t n);
    // dst[i] += w * src[i]
    void (*axpy)(double* dst, const double* src, double w, std::size_t n);
    // x[i] *= w
    void (*scale)(double* x, double w, std::size_t n);
};

// Always available; the reference all variants are tested against.
const Backend& scalar_backend();

// Best backend the running CPU supports, unless overridden. The MOESIM_KERNELS
// environment variable ("scalar", "avx2", "neon") pins the choice at first use.
const Backend& active();

// Force a backend by name. Throws ValidationError if it is not available on
// this CPU/build. Intended for tests and the CLI.
void set_active(std::string_view name);

// Names of backends usable in this process.
std::vector<const char*> available();

}  // namespace moesim::kernels
