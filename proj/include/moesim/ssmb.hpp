// SPDX-License-Identifier: Apache-2.0
//
// Sequence-sharded MoE block: the input sequence is cut into contiguous
// shards, one per group rank, every rank holds the full gate and expert
// weights and runs the padding-free pipeline over its own shard, and an
// all-gather restores the full sequence on every rank. Dispatch and combine
// buffers then scale with the shard length instead of the full sequence.
#pragma once

#include <cstdint>

#include "moesim/collectives.hpp"
#include "moesim/moe_instance.hpp"

namespace moesim {

// Runs the MoE block over `tokens` sharded G ways across comm.group: rank g
// takes rows [g*(S/G), (g+1)*(S/G)) and the last rank absorbs any remainder.
// Routing sees the full expert set on every rank, so shard boundaries do not
// change which experts a token picks; max_token_count applies per shard.
// Returns the reassembled [S, H] sequence (the all-gather leaves an identical
// copy on every rank). counters, if given, gains one per-rank entry each.
Matrix ssmb_forward(const Matrix& tokens, std::int64_t G, const MoeLayerWeights& weights,
                    std::int64_t num_experts, std::int64_t top_k,
                    std::int64_t max_token_count, Comm& comm,
                    ActivationCounters* counters = nullptr);

}  // namespace moesim
