// SPDX-License-Identifier: Apache-2.0
//
// A concrete MoE layer instance the pipelines execute: per-worker activations
// plus the full weight set. Both the padded reference pipeline and the
// padding-free pipeline consume exactly this, which is what makes them
// comparable oracle-style.
#pragma once

#include <cstdint>
#include <vector>

#include "moesim/matrix.hpp"
#include "moesim/rng.hpp"

namespace moesim {

struct MoeLayerWeights {
    Matrix gate;             // [H, E]
    std::vector<Matrix> w1;  // per expert [H, F]
    std::vector<Matrix> w2;  // per expert [F, H]
};

MoeLayerWeights make_layer_weights(Rng& rng, std::int64_t num_experts,
                                   std::int64_t model_dim, std::int64_t ffn_dim);

struct MoeInstance {
    std::vector<Matrix> tokens;  // per group-rank [S_w, H]
    MoeLayerWeights weights;
    std::int64_t num_experts = 0;
    std::int64_t top_k = 1;
    std::int64_t max_token_count = 1;
};

// Per-worker element counts of the dispatch-path buffers each pipeline
// allocates; the planner compares footprints from these.
struct ActivationCounters {
    std::vector<std::uint64_t> dispatch_in_elements;
    std::vector<std::uint64_t> dispatch_out_elements;

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto v : dispatch_in_elements) t += v;
        for (auto v : dispatch_out_elements) t += v;
        return t;
    }
};

}  // namespace moesim
