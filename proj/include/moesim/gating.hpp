// SPDX-License-Identifier: Apache-2.0
//
// Linear top-k router. Scores are a softmax over all experts; the selected
// raw probabilities become the combine weights with no renormalization, so a
// token's weights sum to at most 1.
#pragma once

#include <cstdint>

#include "moesim/matrix.hpp"
#include "moesim/rng.hpp"

namespace moesim {

struct GateOutput {
    // [S, k] expert ids per token, by descending probability; ties go to the
    // lower expert id. Entries within a row are distinct.
    std::vector<std::int64_t> top_experts;
    // [S, k] softmax probabilities matching top_experts.
    std::vector<double> combine_weights;
    // The routed activations, passed through untouched for the dispatch
    // stage's row gathers.
    Matrix gate_out;
    std::int64_t top_k = 0;

    std::int64_t expert_at(std::size_t token, std::int64_t slot) const {
        return top_experts[token * top_k + slot];
    }
    double weight_at(std::size_t token, std::int64_t slot) const {
        return combine_weights[token * top_k + slot];
    }
};

// tokens [S, H] x gate_weights [H, E] -> logits, row softmax, top-k.
GateOutput gate_forward(const Matrix& tokens, const Matrix& gate_weights, std::int64_t top_k);

// Router weights as trained models initialize them: seeded uniform(-0.1, 0.1),
// no bias.
Matrix make_gate_weights(Rng& rng, std::int64_t model_dim, std::int64_t num_experts);

}  // namespace moesim
