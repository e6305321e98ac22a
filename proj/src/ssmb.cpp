// SPDX-License-Identifier: Apache-2.0

#include "moesim/ssmb.hpp"

#include <algorithm>
#include <utility>

#include "moesim/pf_pipeline.hpp"

namespace moesim {

Matrix ssmb_forward(const Matrix& tokens, std::int64_t G, const MoeLayerWeights& weights,
                    std::int64_t num_experts, std::int64_t top_k,
                    std::int64_t max_token_count, Comm& comm, ActivationCounters* counters) {
    const auto S = static_cast<std::int64_t>(tokens.rows);
    if (G < 1) throw ValidationError("ssmb_forward: shard count must be >= 1");
    if (G > S) throw ValidationError("ssmb_forward: more shards than sequence rows");
    if (static_cast<std::size_t>(G) != comm.group.size())
        throw ValidationError("ssmb_forward: shard count must match the worker-group size");

    const std::int64_t base = S / G;
    std::vector<Matrix> shard_out(G);
    for (std::int64_t g = 0; g < G; ++g) {
        const std::int64_t begin = g * base;
        const std::int64_t rows = (g == G - 1) ? S - begin : base;
        Matrix shard(rows, tokens.cols);
        std::copy(tokens.row(begin), tokens.row(begin + rows), shard.row(0));

        MoeInstance inst;
        inst.tokens.push_back(std::move(shard));
        inst.weights = weights;  // replicated on every rank
        inst.num_experts = num_experts;
        inst.top_k = top_k;
        inst.max_token_count = max_token_count;

        // Each rank routes its shard over the full expert set locally; only
        // the final all-gather touches the network.
        Comm local;
        local.group.node_of = {comm.group.node_of[g]};
        local.topo = comm.topo;
        local.dtype_bytes = comm.dtype_bytes;
        local.ledger = comm.ledger;
        shard_out[g] = std::move(pf_moe_forward(inst, local, counters)[0]);
    }
    return allgather_rows(comm, shard_out, "ssmb_gather_rows");
}

}  // namespace moesim
