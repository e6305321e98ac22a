// SPDX-License-Identifier: Apache-2.0
//
// Closed-form memory models: dispatch-path activation sizes of one MoE layer
// and the tradeoff between sequence-sharding the MoE block (saves activation
// memory proportional to routed tokens) and keeping a tensor-sliced dense
// block (costs a fixed weight-gather buffer). All results are analytic bytes
// in double precision since capacity factors are fractional; batch is folded
// into the per-device sequence length throughout.
#pragma once

#include <cstdint>

#include "moesim/config.hpp"
#include "moesim/moe_instance.hpp"

namespace moesim {

// Sizes of the four per-layer dispatch-path activations: the routed token
// copies entering the experts, their weighted return, and the two expert-FFN
// intermediates. Without the capacity flag these are the exact zero-padded
// sizes; with it they grow by the capacity factor to the allocated bound.
struct ActivationReport {
    double dispatch_bytes = 0.0;
    double combine_bytes = 0.0;
    double interm0_bytes = 0.0;
    double interm1_bytes = 0.0;
    bool with_capacity = false;

    double total() const {
        return dispatch_bytes + combine_bytes + interm0_bytes + interm1_bytes;
    }
};

ActivationReport activation_sizes(const ModelConfig& cfg, bool apply_capacity);

// Per-device activation bytes saved by sharding the MoE block G ways:
// 4 * c * k * S * H * (G - 1) / G. The constant 4 counts the dispatch-path
// tensors that shrink with the shard (dispatch, combine, both intermediates
// normalized to H columns in the source model's accounting).
double ssmb_saving(std::int64_t G, double capacity_factor, std::int64_t top_k,
                   std::int64_t seq_len, std::int64_t model_dim);

// Lowest extra buffer cost of running the expert FFNs tensor-sliced G ways
// instead: 8 * H_FFN * H * (G - 1) / G bytes of gathered weight shards,
// independent of sequence length and routing.
double ted_min_cost(std::int64_t G, std::int64_t ffn_dim, std::int64_t model_dim);

// Which side wins for every shard count at once: the ratio r = k / H_FFN
// against the threshold 2 / (c * S). The (G - 1) / G factor is common to
// both formulas, so the comparison is G-free.
enum class Region { kSsmb, kTed, kTie };

const char* region_name(Region r);

Region advantage_region(std::int64_t top_k, std::int64_t ffn_dim, std::int64_t seq_len,
                        double capacity_factor);

// Element counts of the dispatch-path buffers each pipeline actually
// allocated on a concrete instance, from the counters the forwards fill.
struct FootprintReport {
    std::uint64_t pf_elements = 0;
    std::uint64_t padded_elements = 0;
};

FootprintReport buffer_footprint(const ActivationCounters& pf,
                                 const ActivationCounters& padded);

}  // namespace moesim
