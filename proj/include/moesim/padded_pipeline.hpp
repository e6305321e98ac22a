// SPDX-License-Identifier: Apache-2.0
//
// Zero-padded reference pipeline: dense dispatch masks, fixed-capacity expert
// buffers, even all-to-alls. Kept deliberately independent of the
// padding-free implementation; the equivalence suite runs both on the same
// instances and compares outputs.
#pragma once

#include <cstdint>
#include <vector>

#include "moesim/collectives.hpp"
#include "moesim/gating.hpp"
#include "moesim/moe_instance.hpp"

namespace moesim {

struct DispatchMask {
    std::size_t seq_len = 0;
    std::size_t num_experts = 0;
    std::size_t capacity = 0;
    // [S, E, C], row-major; at most one token per (expert, slot).
    std::vector<std::uint8_t> mask;
    // [S, E] gate weight of the assigned copy, 0 where no slot was granted.
    std::vector<double> weight;

    bool at(std::size_t t, std::size_t e, std::size_t c) const {
        return mask[(t * num_experts + e) * capacity + c] != 0;
    }
};

// Applies the identical capacity rule as the packed construction (keep the
// highest-weight copies, ties toward the earlier routing position), granting
// slots in token order.
DispatchMask build_dispatch_mask(const GateOutput& gate, std::int64_t num_experts,
                                 std::int64_t max_token_count);

// Runs the full padded layer for every worker of the group and returns the
// per-worker combined outputs [S_w, H].
std::vector<Matrix> padded_moe_forward(const MoeInstance& inst, Comm& comm,
                                       ActivationCounters* counters = nullptr);

}  // namespace moesim
