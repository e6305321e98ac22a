// SPDX-License-Identifier: Apache-2.0

#include "moesim/placement.hpp"

#include "moesim/error.hpp"

namespace moesim {

Placement place_experts(const ModelConfig& model, const Topology& topo,
                        std::int64_t ep_size, PlacementStrategy strategy) {
    if (ep_size < 1) throw ValidationError("ep_size must be >= 1");
    if (topo.workers() % ep_size != 0)
        throw ValidationError("ep_size must divide the total worker count");
    if (model.num_experts % ep_size != 0)
        throw ValidationError("num_experts must be divisible by ep_size");

    Placement p;
    p.ep_size = ep_size;
    p.dp_size = topo.workers() / ep_size;
    p.strategy = strategy;
    p.experts_per_worker = model.num_experts / ep_size;

    p.ep_groups.resize(p.dp_size);
    for (std::int64_t g = 0; g < p.dp_size; ++g) {
        auto& members = p.ep_groups[g];
        members.resize(ep_size);
        for (std::int64_t j = 0; j < ep_size; ++j) {
            // EpFirst packs a group into consecutive workers (row-major over
            // nodes); DpFirst strides members dp_size apart so the j-th slot
            // of every group, i.e. the replicas of one expert block, lands on
            // consecutive workers instead.
            members[j] = strategy == PlacementStrategy::kEpFirst
                             ? g * ep_size + j
                             : g + j * p.dp_size;
        }
    }

    p.expert_owner.resize(p.dp_size);
    for (std::int64_t g = 0; g < p.dp_size; ++g) {
        auto& owner = p.expert_owner[g];
        owner.resize(model.num_experts);
        for (std::int64_t e = 0; e < model.num_experts; ++e)
            owner[e] = p.ep_groups[g][e / p.experts_per_worker];
    }
    return p;
}

PlacementCost placement_cost(const ModelConfig& model, const Topology& topo,
                             const Placement& p) {
    PlacementCost cost;
    const double row_bytes =
        static_cast<double>(model.model_dim) * static_cast<double>(model.dtype_bytes);
    const double copies =
        static_cast<double>(model.local_tokens()) * static_cast<double>(model.top_k);

    // Dispatch+combine all-to-alls inside each EP group. Under uniform routing
    // each member's copies split evenly over the ep_size members; copies that
    // resolve to the sender itself never touch the network.
    const double pair_bytes = copies / static_cast<double>(p.ep_size) * row_bytes * 2.0;
    for (const auto& members : p.ep_groups) {
        for (std::int64_t a : members) {
            for (std::int64_t b : members) {
                if (a == b) continue;
                if (topo.node_of(a) == topo.node_of(b))
                    cost.ep_intranode_bytes += pair_bytes;
                else
                    cost.ep_internode_bytes += pair_bytes;
            }
        }
    }

    // Ring all-reduce of each worker's expert parameters across its replica
    // group (the j-th member of every EP group holds the same expert block).
    const double param_bytes = static_cast<double>(p.experts_per_worker) * 2.0 *
                               static_cast<double>(model.model_dim) *
                               static_cast<double>(model.ffn_dim) *
                               static_cast<double>(model.dtype_bytes);
    const double per_worker = 2.0 *
                              static_cast<double>(p.dp_size - 1) /
                              static_cast<double>(p.dp_size) * param_bytes;
    for (std::int64_t j = 0; j < p.ep_size; ++j) {
        bool spans_nodes = false;
        const std::int64_t first_node = topo.node_of(p.ep_groups[0][j]);
        for (std::int64_t g = 1; g < p.dp_size; ++g)
            if (topo.node_of(p.ep_groups[g][j]) != first_node) spans_nodes = true;
        const double group_bytes = per_worker * static_cast<double>(p.dp_size);
        if (spans_nodes)
            cost.dp_internode_bytes += group_bytes;
        else
            cost.dp_intranode_bytes += group_bytes;
    }
    return cost;
}

WorkerGroup ep_group_view(const Placement& p, const Topology& topo, std::int64_t group) {
    if (group < 0 || group >= p.dp_size) throw IndexError("ep group index out of range");
    WorkerGroup g;
    g.node_of.reserve(p.ep_groups[group].size());
    for (std::int64_t w : p.ep_groups[group]) g.node_of.push_back(topo.node_of(w));
    return g;
}

}  // namespace moesim
