// SPDX-License-Identifier: Apache-2.0
//
// Padding-free pipeline: tokens travel packed, with per-expert counts as the
// only control traffic. Because expert ownership is a contiguous ascending
// block per worker, a packed buffer is already segmented by destination and
// the exchange needs no per-row addressing.
#pragma once

#include <cstdint>
#include <vector>

#include "moesim/collectives.hpp"
#include "moesim/moe_instance.hpp"
#include "moesim/pft.hpp"

namespace moesim {

struct PfDispatch {
    // Per worker: [n_w, H] received rows regrouped for compute, ordered by
    // (local expert, source rank, source position).
    std::vector<Matrix> expert_input;
    // Per worker: rows landing on each of its E/W local experts.
    std::vector<std::vector<std::int64_t>> recv_per_expert;
    // Row counts of the forward exchange; the combine reuses the transpose.
    CountMatrix row_counts;
    // Per worker: arrival row index -> regrouped row index, applied in
    // reverse before the return trip.
    std::vector<std::vector<std::int64_t>> arrival_to_grouped;
};

// Forward exchange. Every packed buffer must have x gathered ([B, H] rows
// matching the ERI arrays). Charges the per-expert count exchange as
// control-plane bytes plus the row payload itself.
PfDispatch pf_dispatch(Comm& comm, const std::vector<Pft>& pfts, std::int64_t num_experts);

// Runs each owned expert's FFN over its contiguous row segment of input;
// experts are first_expert, first_expert + 1, ... in segment order.
Matrix grouped_expert_mlp(const Matrix& input, const std::vector<std::int64_t>& rows_per_expert,
                          const MoeLayerWeights& weights, std::int64_t first_expert);

// Return exchange and weighted scatter back into [S_w, H] per worker.
std::vector<Matrix> pf_combine(Comm& comm, const PfDispatch& dispatch,
                               const std::vector<Matrix>& expert_out,
                               const std::vector<Pft>& pfts,
                               const std::vector<std::size_t>& seq_lens);

// Full layer: gate, pack, dispatch, expert FFNs, combine.
std::vector<Matrix> pf_moe_forward(const MoeInstance& inst, Comm& comm,
                                   ActivationCounters* counters = nullptr);

}  // namespace moesim
