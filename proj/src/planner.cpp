// SPDX-License-Identifier: Apache-2.0

#include "moesim/planner.hpp"

#include "moesim/error.hpp"

namespace moesim {

ActivationReport activation_sizes(const ModelConfig& cfg, bool apply_capacity) {
    const double routed = static_cast<double>(cfg.top_k) * cfg.micro_batch * cfg.seq_len;
    const double scale = apply_capacity ? cfg.capacity_factor : 1.0;
    ActivationReport r;
    r.dispatch_bytes = scale * routed * cfg.model_dim * cfg.dtype_bytes;
    r.combine_bytes = r.dispatch_bytes;
    r.interm0_bytes = scale * routed * cfg.ffn_dim * cfg.dtype_bytes;
    r.interm1_bytes = r.interm0_bytes;
    r.with_capacity = apply_capacity;
    return r;
}

double ssmb_saving(std::int64_t G, double capacity_factor, std::int64_t top_k,
                   std::int64_t seq_len, std::int64_t model_dim) {
    if (G < 1) throw ValidationError("ssmb_saving: shard count must be >= 1");
    const double frac = static_cast<double>(G - 1) / static_cast<double>(G);
    return 4.0 * capacity_factor * static_cast<double>(top_k) * seq_len * model_dim * frac;
}

double ted_min_cost(std::int64_t G, std::int64_t ffn_dim, std::int64_t model_dim) {
    if (G < 1) throw ValidationError("ted_min_cost: shard count must be >= 1");
    const double frac = static_cast<double>(G - 1) / static_cast<double>(G);
    return 8.0 * static_cast<double>(ffn_dim) * model_dim * frac;
}

const char* region_name(Region r) {
    switch (r) {
        case Region::kSsmb: return "SSMB";
        case Region::kTed: return "TED";
        case Region::kTie: return "Tie";
    }
    return "Tie";
}

Region advantage_region(std::int64_t top_k, std::int64_t ffn_dim, std::int64_t seq_len,
                        double capacity_factor) {
    if (top_k < 1 || ffn_dim < 1 || seq_len < 1 || capacity_factor <= 0.0)
        throw ValidationError("advantage_region: inputs must be positive");
    // r > 2 / (c * S) with r = k / H_FFN, cross-multiplied so exact ties
    // stay exact.
    const double lhs = capacity_factor * static_cast<double>(top_k) * seq_len;
    const double rhs = 2.0 * static_cast<double>(ffn_dim);
    if (lhs > rhs) return Region::kSsmb;
    if (lhs < rhs) return Region::kTed;
    return Region::kTie;
}

FootprintReport buffer_footprint(const ActivationCounters& pf,
                                 const ActivationCounters& padded) {
    FootprintReport r;
    r.pf_elements = pf.total();
    r.padded_elements = padded.total();
    return r;
}

}  // namespace moesim
