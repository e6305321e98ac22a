// SPDX-License-Identifier: Apache-2.0
//
// Runtime backend selection. Default order: best SIMD variant the CPU
// supports, falling back to scalar. MOESIM_KERNELS overrides.

#include <cstdlib>
#include <string>

#include "moesim/error.hpp"
#include "moesim/kernels.hpp"

namespace moesim::kernels {

#if defined(__x86_64__) || defined(_M_X64)
extern const Backend kAvx2Backend;
#endif
#if defined(__aarch64__)
extern const Backend kNeonBackend;
#endif

namespace {

const Backend* find_backend(std::string_view name) {
    if (name == "scalar") return &scalar_backend();
#if defined(__x86_64__) || defined(_M_X64)
    if (name == "avx2" && __builtin_cpu_supports("avx2")) return &kAvx2Backend;
#endif
#if defined(__aarch64__)
    // NEON is architecturally guaranteed on aarch64.
    if (name == "neon") return &kNeonBackend;
#endif
    return nullptr;
}

const Backend* pick_default() {
#if defined(__x86_64__) || defined(_M_X64)
    if (__builtin_cpu_supports("avx2")) return &kAvx2Backend;
#endif
#if defined(__aarch64__)
    return &kNeonBackend;
#endif
    return &scalar_backend();
}

const Backend*& active_slot() {
    static const Backend* slot = [] {
        if (const char* env = std::getenv("MOESIM_KERNELS")) {
            if (const Backend* b = find_backend(env)) return b;
            // An unusable override falls through to auto-detection rather than
            // aborting; the CLI surfaces the active backend on request.
        }
        return pick_default();
    }();
    return slot;
}

}  // namespace

const Backend& active() { return *active_slot(); }

void set_active(std::string_view name) {
    const Backend* b = find_backend(name);
    if (b == nullptr)
        throw ValidationError("kernel backend not available: " + std::string(name));
    active_slot() = b;
}

std::vector<const char*> available() {
    std::vector<const char*> names{"scalar"};
#if defined(__x86_64__) || defined(_M_X64)
    if (__builtin_cpu_supports("avx2")) names.push_back("avx2");
#endif
#if defined(__aarch64__)
    names.push_back("neon");
#endif
    return names;
}

}  // namespace moesim::kernels
