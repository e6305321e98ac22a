// SPDX-License-Identifier: Apache-2.0
//
// Redundancy-bypassing dispatch. A token routed to several experts on the
// same node crosses the node boundary once: copies are grouped by (token,
// destination node), a seeded-random pilot per group carries the row in
// stage 1, and the landing worker reconstructs the remaining copies and
// forwards them over the node-local links in stage 2. The combine path runs
// the same two stages in reverse, scaling and merging each group's expert
// outputs at the pilot's landing worker so a single row crosses the node
// boundary on the way back too. Groups whose destination node is the source's
// own node go through the same machinery; their pilot hop is just an
// intra-node or self message.
#pragma once

#include <cstdint>
#include <vector>

#include "moesim/collectives.hpp"
#include "moesim/moe_instance.hpp"
#include "moesim/pft.hpp"
#include "moesim/rng.hpp"

namespace moesim {

// Node hosting each expert, from the contiguous-block ownership.
std::vector<std::int64_t> expert_nodes(const WorkerGroup& group, std::int64_t num_experts);

struct RbdPlan {
    // [B] over the source's packed rows; true marks the group pilot.
    std::vector<std::uint8_t> pilot_mask;
    // Pilot and replica copies as packed ERI arrays (x stays empty; rows are
    // subsequences of the source buffer, so both remain expert-sorted).
    Pft pilots;
    Pft replicas;
    // Per replica: sequence number of its pilot within the pilot arrays, and
    // the pilot's relative index among pilots targeting the same expert. The
    // relative form is what travels; the landing worker re-encodes it to an
    // absolute arrival row.
    std::vector<std::int64_t> replica_pilot_seq;
    std::vector<std::int64_t> s1_mapping;
};

// Groups the packed copies by (token, destination node) and draws one pilot
// per group, uniformly at random from the group. Pure given the seed; callers
// salt the seed per worker (and per layer or step) for independent draws.
RbdPlan select_pilots(const Pft& pft, const WorkerGroup& group, std::int64_t num_experts,
                      std::uint64_t seed);

struct RbdDispatch {
    // Exactly pf_dispatch's outputs: same rows, same order.
    std::vector<Matrix> expert_input;
    std::vector<std::vector<std::int64_t>> recv_per_expert;

    CountMatrix s1_counts;  // pilot rows, source -> landing worker
    CountMatrix s2_counts;  // replica rows, landing worker -> owner

    // Per landing worker, one entry per arrived pilot in arrival order.
    std::vector<std::vector<std::int64_t>> landed_pos;    // its row in expert_input
    std::vector<std::vector<double>> landed_weight;       // its combine weight
    std::vector<std::vector<std::uint8_t>> landed_multi;  // group has replicas

    // Per landing worker, per stage-2 destination, per forwarded slot: which
    // landed pilot the replica came from and the replica's combine weight.
    std::vector<std::vector<std::vector<std::int64_t>>> s2_slot_pilot;
    std::vector<std::vector<std::vector<double>>> s2_slot_weight;
    // Per owner, per stage-2 source, per arrived slot: its row in expert_input.
    std::vector<std::vector<std::vector<std::int64_t>>> s2_recv_pos;

    // Per source, aligned with its plan's pilot arrays: group has replicas.
    std::vector<std::vector<std::uint8_t>> source_pilot_multi;
};

// Two-stage forward exchange. Stage 1 moves pilot rows plus the replica
// descriptors (two ERI integers and the mapping index at 8 bytes each, one
// weight per replica and per multi-copy pilot at dtype_bytes); stage 2 moves
// reconstructed replica rows with their re-encoded descriptors. The merged
// buffers are bit-identical to pf_dispatch on the same inputs.
RbdDispatch rbd_dispatch(Comm& comm, const std::vector<Pft>& pfts,
                         const std::vector<RbdPlan>& plans, std::int64_t num_experts);

// Reverse path: owners return replica expert-outputs to the landing workers,
// which scale every copy of a multi-copy group by its combine weight and
// merge the group into one row before the node-boundary hop home. Singleton
// groups return raw and are scaled at the source, like the plain path.
std::vector<Matrix> rbd_combine(Comm& comm, const RbdDispatch& dispatch,
                                const std::vector<Matrix>& expert_out,
                                const std::vector<RbdPlan>& plans,
                                const std::vector<std::size_t>& seq_lens);

// Full layer over the bypassing dispatch. The seed should already carry any
// layer or step salt; workers are salted internally.
std::vector<Matrix> rbd_moe_forward(const MoeInstance& inst, Comm& comm, std::uint64_t seed);

// Fraction of copies that ride a link some earlier copy of the same token
// already rides: 1 - groups/copies over (token, destination node) groups.
// The raw-routing form counts all S*k copies; the packed form counts
// surviving rows; the inter-node form restricts to copies leaving the source
// node, which is exactly the fraction of node-crossing rows the bypass saves.
double redundancy_rate(const std::vector<std::int64_t>& top_experts, std::int64_t top_k,
                       const std::vector<std::int64_t>& expert_node);
double redundancy_rate(const Pft& pft, const std::vector<std::int64_t>& expert_node);
double redundancy_rate_internode(const Pft& pft, std::int64_t source_node,
                                 const std::vector<std::int64_t>& expert_node);

// Raw counts behind the inter-node rate, summable across workers: copies
// leaving the source node and the (token, destination node) groups they form.
// Groups is exactly the node-crossing row count under the bypass.
struct RedundancyCounts {
    std::int64_t copies = 0;
    std::int64_t groups = 0;
};
RedundancyCounts internode_redundancy_counts(const Pft& pft, std::int64_t source_node,
                                             const std::vector<std::int64_t>& expert_node);

// Monte Carlo estimate under uniform routing: each token draws top_k distinct
// experts uniformly.
double sample_redundancy(Rng& rng, std::size_t tokens, std::int64_t top_k,
                         const std::vector<std::int64_t>& expert_node);

}  // namespace moesim
