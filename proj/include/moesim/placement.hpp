// SPDX-License-Identifier: Apache-2.0
//
// Expert-to-worker assignment and the step-level communication cost of a
// placement choice.
#pragma once

#include <cstdint>
#include <vector>

#include "moesim/config.hpp"

namespace moesim {

struct Placement {
    std::int64_t ep_size = 1;
    std::int64_t dp_size = 1;
    PlacementStrategy strategy = PlacementStrategy::kEpFirst;
    std::int64_t experts_per_worker = 0;
    // ep_groups[g][j]: worker id of member j of expert-parallel group g.
    std::vector<std::vector<std::int64_t>> ep_groups;
    // expert_owner[g][e]: worker owning expert e inside group g. Member j owns
    // the contiguous block [j*experts_per_worker, (j+1)*experts_per_worker).
    std::vector<std::vector<std::int64_t>> expert_owner;

    // Group-local rank of the member owning expert e (same in every group).
    std::int64_t owner_slot(std::int64_t e) const { return e / experts_per_worker; }
};

Placement place_experts(const ModelConfig& model, const Topology& topo,
                        std::int64_t ep_size, PlacementStrategy strategy);

// Expected bytes moved in one training step, split by traffic class.
// Expert-parallel traffic assumes uniform routing: each of the
// micro_batch*seq_len*top_k copies a worker emits is equally likely to target
// any group member, and the volume is doubled to cover dispatch plus combine.
// Data-parallel traffic models a ring all-reduce of each worker's expert
// parameters: 2*(dp_size-1)/dp_size of the parameter bytes, classified
// inter-node iff the replica group spans nodes.
struct PlacementCost {
    double ep_internode_bytes = 0.0;
    double ep_intranode_bytes = 0.0;
    double dp_internode_bytes = 0.0;
    double dp_intranode_bytes = 0.0;
};

PlacementCost placement_cost(const ModelConfig& model, const Topology& topo,
                             const Placement& placement);

// Node id per member of one expert-parallel group, in member order. The
// pipelines simulate a single group and consult this for traffic classing.
struct WorkerGroup {
    std::vector<std::int64_t> node_of;
    std::size_t size() const { return node_of.size(); }
};

WorkerGroup ep_group_view(const Placement& placement, const Topology& topo,
                          std::int64_t group = 0);

}  // namespace moesim
