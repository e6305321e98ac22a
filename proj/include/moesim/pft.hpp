// SPDX-License-Identifier: Apache-2.0
//
// Padding-free token buffer: the packed alternative to fixed-capacity expert
// buffers. Rows live in x; the parallel ERI arrays say which source token a
// row came from, which expert it targets, and the gate weight it carries back
// at combine time. Rows are grouped by expert, experts ascending.
#pragma once

#include <cstdint>
#include <vector>

#include "moesim/gating.hpp"
#include "moesim/matrix.hpp"

namespace moesim {

struct Pft {
    Matrix x;  // [B, H]; empty until a dispatch stage gathers rows
    std::vector<std::int64_t> token_ids;          // [B] row into the source activations
    std::vector<std::int64_t> expert_ids;         // [B] non-decreasing
    std::vector<std::int64_t> tokens_per_expert;  // [E]
    std::vector<double> combine_weights;          // [B]

    std::size_t size() const { return token_ids.size(); }
};

// Builds the ERI arrays from routing decisions, applying the capacity rule:
// each expert keeps at most max_token_count copies, preferring higher combine
// weight, ties resolved toward the earlier routing position (token-major,
// slot-minor). Retained copies appear in routing-position order within each
// expert, which for distinct-per-row routing is ascending token id.
Pft pft_construct(std::int64_t max_token_count, std::int64_t num_experts,
                  std::size_t seq_len, std::int64_t top_k,
                  const std::vector<std::int64_t>& top_experts,
                  const std::vector<double>& combine_weights);

Pft pft_construct(std::int64_t max_token_count, std::int64_t num_experts,
                  const GateOutput& gate);

// out[i] = src[ids[i]], row-wise.
Matrix gather_rows(const Matrix& src, const std::vector<std::int64_t>& ids);

// out[token_ids[i]] += weights[i] * rows[i], accumulated in ascending i so
// results are reproducible.
Matrix scatter_combine(const Matrix& rows, const std::vector<std::int64_t>& token_ids,
                       const std::vector<double>& weights, std::size_t seq_len);

}  // namespace moesim
