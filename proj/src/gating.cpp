// SPDX-License-Identifier: Apache-2.0

#include "moesim/gating.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moesim/error.hpp"
#include "moesim/kernels.hpp"

namespace moesim {

GateOutput gate_forward(const Matrix& tokens, const Matrix& gate_weights,
                        std::int64_t top_k) {
    if (tokens.cols != gate_weights.rows)
        throw DimensionError("gate_forward: tokens.cols != gate_weights.rows");
    const std::size_t S = tokens.rows;
    const std::size_t E = gate_weights.cols;
    if (top_k < 1) throw ValidationError("top_k must be >= 1");
    if (static_cast<std::size_t>(top_k) > E)
        throw ValidationError("top_k must be <= num_experts");

    Matrix logits(S, E);
    kernels::active().matmul(tokens.data.data(), gate_weights.data.data(),
                             logits.data.data(), S, tokens.cols, E);

    GateOutput out;
    out.top_k = top_k;
    out.top_experts.resize(S * top_k);
    out.combine_weights.resize(S * top_k);
    out.gate_out = tokens;

    std::vector<double> probs(E);
    std::vector<std::int64_t> order(E);
    for (std::size_t t = 0; t < S; ++t) {
        const double* row = logits.row(t);
        // Max-shifted softmax over all experts.
        double mx = row[0];
        for (std::size_t e = 1; e < E; ++e) mx = std::max(mx, row[e]);
        double sum = 0.0;
        for (std::size_t e = 0; e < E; ++e) sum += probs[e] = std::exp(row[e] - mx);
        for (std::size_t e = 0; e < E; ++e) probs[e] /= sum;

        std::iota(order.begin(), order.end(), std::int64_t{0});
        std::partial_sort(order.begin(), order.begin() + top_k, order.end(),
                          [&](std::int64_t a, std::int64_t b) {
                              if (probs[a] != probs[b]) return probs[a] > probs[b];
                              return a < b;
                          });
        for (std::int64_t j = 0; j < top_k; ++j) {
            out.top_experts[t * top_k + j] = order[j];
            out.combine_weights[t * top_k + j] = probs[order[j]];
        }
    }
    return out;
}

Matrix make_gate_weights(Rng& rng, std::int64_t model_dim, std::int64_t num_experts) {
    Matrix w(model_dim, num_experts);
    for (auto& x : w.data) x = rng.uniform(-0.1, 0.1);
    return w;
}

}  // namespace moesim
